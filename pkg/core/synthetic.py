"""
Synthetic ensemble tables with planted critical points, for validating the fits.
"""
import math
from typing import Dict, Optional, Sequence

import numpy as np
import pandas as pd

from core.tables import EnsembleTable, table_columns

PLANTED_P_C = 0.3
PLANTED_NU = 4.0 / 3.0
PLANTED_GRADVAR_NU = 1.3
PLANTED_DENSITY = 0.2


def scaling_function(x):
    """Volume-law side positive, area-law side negative."""
    return -np.tanh(np.asarray(x, dtype=float) / 1.5)


def critical_entropy(n: int) -> float:
    """Constant density at p_c, so the S/N curves cross exactly there."""
    return PLANTED_DENSITY * n


def entropy_surface(n: int, p: float, p_c: float = PLANTED_P_C, nu: float = PLANTED_NU) -> float:
    return critical_entropy(n) + float(scaling_function(n ** (1.0 / nu) * (p - p_c)))


def synthetic_collapse_table(sizes: Sequence[int] = (6, 8, 10, 12),
                             p_grid: Optional[Sequence[float]] = None,
                             p_c: float = PLANTED_P_C, nu: float = PLANTED_NU,
                             noise: float = 0.01, samples: int = 100, seed: int = 0,
                             depth: int = 16, family: str = "xxz_hva") -> EnsembleTable:
    """
    Entropy table following S(N,p) = s_c N + f(N^{1/ν}(p - p_c)) with per-realization
    raw values. `noise` is the relative standard error of each cell mean.
    """
    if p_grid is None:
        p_grid = np.round(np.arange(0.0, 0.6001, 0.05), 10)
    if samples < 2:
        raise ValueError("Need at least 2 samples per cell")
    rng = np.random.default_rng(seed)
    raw: Dict[tuple, np.ndarray] = {}
    for n in sizes:
        for p in p_grid:
            truth = entropy_surface(int(n), float(p), p_c, nu)
            sigma = noise * abs(truth) * math.sqrt(samples)
            raw[(int(n), float(p))] = truth + sigma * rng.standard_normal(samples)
    metadata = {
        "synthetic": "collapse",
        "planted_p_c": p_c,
        "planted_nu": nu,
        "noise": noise,
        "seed": seed,
    }
    return EnsembleTable.from_samples("entropy", family, depth, raw, metadata, keep_raw=True)


def gradvar_surface(n: int, p: float, p_c: float, nu: float, plateau: float) -> float:
    return plateau + math.exp(-abs(p - p_c) * n ** (1.0 / nu))


def synthetic_gradvar_table(sizes: Sequence[int] = (6, 8, 10, 12),
                            p_grid: Optional[Sequence[float]] = None,
                            p_c: float = 0.5, nu: float = PLANTED_GRADVAR_NU,
                            plateau: Optional[Dict[int, float]] = None, rel_err: float = 0.02,
                            noise: float = 0.0, samples: int = 1000, seed: int = 0,
                            depth: int = 16, family: str = "hea") -> EnsembleTable:
    """
    Gradient-variance table from C_N + exp(-|p - p_c| N^{1/ν}). Cells carry a
    nominal relative error `rel_err`; `noise` perturbs the means by that fraction.
    """
    if p_grid is None:
        p_grid = np.round(np.arange(0.0, 0.8001, 0.1), 10)
    plateau = plateau or {int(n): 0.02 for n in sizes}
    rng = np.random.default_rng(seed)
    records = []
    for n in sizes:
        for p in p_grid:
            truth = gradvar_surface(int(n), float(p), p_c, nu, plateau[int(n)])
            mean = truth * (1.0 + noise * rng.standard_normal()) if noise else truth
            stderr = rel_err * truth
            records.append({
                "family": family,
                "N": int(n),
                "p": float(p),
                "L": int(depth),
                "R": int(samples),
                "mean": mean,
                "std": stderr * math.sqrt(samples),
                "stderr": stderr,
            })
    rows = pd.DataFrame.from_records(records, columns=table_columns("grad_variance"))
    metadata = {
        "synthetic": "gradvar",
        "planted_p_c": p_c,
        "planted_nu": nu,
        "noise": noise,
        "seed": seed,
    }
    return EnsembleTable("grad_variance", rows, metadata)
