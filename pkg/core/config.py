"""
Centralized paths, defaults and the experiment config. Override via env vars so the
CLI works from any CWD.
"""
import hashlib
import json
import math
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Optional, Tuple

from core.circuits import num_parameters
from core.errors import ConfigError
from core.observables import Observable

# Base output directory (tables, manifests, reports). Set ENTANGLE_DATA_DIR to override.
DATA_DIR = os.environ.get("ENTANGLE_DATA_DIR", "data")
# Default worker count for ensemble runs (set ENTANGLE_THREADS to override).
DEFAULT_THREADS = int(os.environ.get("ENTANGLE_THREADS", "1"))
# Largest M for which gradients enumerate all 2^M branches.
EXACT_BRANCH_CAP = int(os.environ.get("ENTANGLE_EXACT_BRANCH_CAP", "14"))

FAMILIES = ("xxz_hva", "hea")
VALUE_KINDS = ("entropy", "grad_variance", "mutual_info")
DEFAULT_DEPTH = 16
DEFAULT_OBSERVABLE = "Z0 Z1"
GRADIENT_ESTIMATORS = ("mixture", "branch")

# Fields that only affect how a run executes, never what it writes.
EXECUTION_FIELDS = ("threads", "out_dir")


def ensure_dirs(path: Optional[str] = None):
    """Create the output directory if it doesn't exist."""
    os.makedirs(path or DATA_DIR, exist_ok=True)


@dataclass(frozen=True)
class ExperimentConfig:
    family: str = "xxz_hva"
    sizes: Tuple[int, ...] = (6, 8, 10, 12)
    depth: int = DEFAULT_DEPTH
    p_grid: Tuple[float, ...] = ()
    samples: int = 500
    base_seed: int = 1234
    observable: str = DEFAULT_OBSERVABLE
    param_index: int = 0
    gradient_estimator: str = "mixture"
    kind: str = "entropy"
    r_values: Tuple[int, ...] = ()
    hea_cnot_wrap: bool = True
    entropy_base: str = "e"
    chi2_convention: str = "squared"
    error_column: str = "stderr"
    per_layer: bool = False
    raw: bool = False
    k_boot: int = 100
    threads: int = DEFAULT_THREADS
    out_dir: str = DATA_DIR
    notes: Tuple[str, ...] = field(default=(
        "each realization resamples gate parameters and measurement locations",
    ))

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"Unknown circuit family '{self.family}'. Use one of {FAMILIES}.")
        if self.kind not in VALUE_KINDS:
            raise ConfigError(f"Unknown value kind '{self.kind}'. Use one of {VALUE_KINDS}.")
        if not self.sizes:
            raise ConfigError("Config needs at least one system size.")
        for n in self.sizes:
            if n < 2:
                raise ConfigError(f"System size {n} is below 2.")
            if self.family == "xxz_hva" and n % 2:
                raise ConfigError(f"xxz_hva needs even N, got {n}.")
            if self.kind == "entropy" and n % 2:
                raise ConfigError(f"Half-chain entropy needs even N, got {n}.")
        if self.depth < 1:
            raise ConfigError(f"Depth must be positive, got {self.depth}.")
        for p in self.p_grid:
            if not (0.0 <= p <= 1.0) or not math.isfinite(p):
                raise ConfigError(f"Measurement rate {p} is outside [0, 1].")
        if self.samples < 2:
            raise ConfigError(f"Need at least 2 samples per cell, got {self.samples}.")
        if self.entropy_base not in ("e", "2"):
            raise ConfigError("entropy_base must be 'e' (nats) or '2' (bits).")
        if self.chi2_convention not in ("squared", "linear"):
            raise ConfigError("chi2_convention must be 'squared' or 'linear'.")
        if self.error_column not in ("stderr", "std"):
            raise ConfigError("error_column must be 'stderr' or 'std'.")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1.")
        for r in self.r_values:
            if r < 1 or any(r > n // 2 for n in self.sizes):
                raise ConfigError(f"Distance r={r} must lie in 1..N/2 for every size.")
        try:
            observable = Observable.parse(self.observable)
        except ValueError as e:
            raise ConfigError(str(e)) from e
        if observable.max_qubit >= min(self.sizes):
            raise ConfigError(f"Observable '{self.observable}' acts beyond qubit {min(self.sizes) - 1}.")
        if self.param_index < 0:
            raise ConfigError(f"param_index must be non-negative, got {self.param_index}.")
        for n in self.sizes:
            count = num_parameters(self.family, n, self.depth)
            if self.param_index >= count:
                raise ConfigError(f"param_index {self.param_index} is out of range: {self.family} "
                                  f"at N={n}, L={self.depth} has {count} parameters.")
        if self.gradient_estimator not in GRADIENT_ESTIMATORS:
            raise ConfigError(f"Unknown gradient estimator '{self.gradient_estimator}'. "
                              f"Use one of {GRADIENT_ESTIMATORS}.")
        if self.k_boot < 1:
            raise ConfigError("k_boot must be at least 1.")
        if self.base_seed < 0:
            raise ConfigError("base_seed must be non-negative.")

    def to_dict(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        payload = {k: v for k, v in self.to_dict().items() if k not in EXECUTION_FIELDS}
        blob = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def config_from_dict(data: dict) -> ExperimentConfig:
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"Unknown config keys: {sorted(unknown)}")
    cleaned = dict(data)
    for key in ("sizes", "p_grid", "r_values", "notes"):
        if key in cleaned:
            cleaned[key] = tuple(cleaned[key])
    return ExperimentConfig(**cleaned)


def read_config_dict(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except OSError as e:
        raise ConfigError(f"Cannot read config file {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config file {path} is not valid JSON: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError("Config file must hold a flat JSON object.")
    return data


def load_config(path: str) -> ExperimentConfig:
    return config_from_dict(read_config_dict(path))


def save_config(config: ExperimentConfig, path: str):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(config.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
