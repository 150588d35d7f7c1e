"""
Experiment presets at desk and full scale, per command and circuit family.
"""
import numpy as np


def _grid(start: float, stop: float, step: float):
    return tuple(float(v) for v in np.round(np.arange(start, stop + step / 2, step), 10))


HVA_P_GRID = _grid(0.0, 0.6, 0.05)
HEA_P_GRID = _grid(0.2, 0.8, 0.05)
GRADVAR_P_GRID = _grid(0.0, 0.8, 0.1)

PRESETS = {
    "desk": {
        "description": "Laptop scale: N ≤ 12, 500 realizations per cell.",
        "sweep": {
            "xxz_hva": {"sizes": (6, 8, 10, 12), "p_grid": HVA_P_GRID, "samples": 500},
            "hea": {"sizes": (6, 8, 10, 12), "p_grid": HEA_P_GRID, "samples": 500},
        },
        "mutinfo": {
            "xxz_hva": {"sizes": (12,), "p_grid": HVA_P_GRID, "samples": 500, "r_values": (1, 2, 3, 4, 5, 6)},
            "hea": {"sizes": (12,), "p_grid": HEA_P_GRID, "samples": 500, "r_values": (1, 2, 3, 4, 5, 6)},
        },
        "gradvar": {
            "xxz_hva": {"sizes": (6, 8, 10), "p_grid": GRADVAR_P_GRID, "samples": 500},
            "hea": {"sizes": (6, 8, 10), "p_grid": GRADVAR_P_GRID, "samples": 500},
        },
    },
    "full": {
        "description": "Full scale: N up to 18, 3000 realizations per entropy cell.",
        "sweep": {
            "xxz_hva": {"sizes": (6, 8, 10, 12, 14, 16, 18), "p_grid": HVA_P_GRID, "samples": 3000},
            "hea": {"sizes": (6, 8, 10, 12, 14, 16, 18), "p_grid": HEA_P_GRID, "samples": 3000},
        },
        "mutinfo": {
            "xxz_hva": {"sizes": (16,), "p_grid": HVA_P_GRID, "samples": 3000, "r_values": tuple(range(1, 9))},
            "hea": {"sizes": (16,), "p_grid": HEA_P_GRID, "samples": 3000, "r_values": tuple(range(1, 9))},
        },
        "gradvar": {
            "xxz_hva": {"sizes": (8, 10, 12, 14, 16, 18), "p_grid": GRADVAR_P_GRID, "samples": 1000},
            "hea": {"sizes": (8, 10, 12, 14, 16, 18), "p_grid": GRADVAR_P_GRID, "samples": 1000},
        },
    },
}


def get_preset_names():
    return list(PRESETS.keys())


def get_preset(scale: str, command: str, family: str) -> dict:
    if scale not in PRESETS:
        raise KeyError(f"Unknown preset scale '{scale}'. Use one of {get_preset_names()}.")
    return dict(PRESETS[scale][command][family])
