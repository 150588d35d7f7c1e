"""
Bootstrap helpers shared by the gradient-variance estimator and the collapse fits.
"""
from typing import Callable

import numpy as np


def bootstrap_statistic(data, statistic: Callable[[np.ndarray], float], nrand: int,
                        rng: np.random.Generator) -> float:
    """
    Standard deviation of `statistic` over `nrand` resamples drawn with replacement.

    Parameters
    ----------
    data: array
        One-dimensional sample.
    statistic: callable
        Maps a resampled array to a float, e.g. np.mean.
    nrand: int
        Number of resamples, e.g. 100.
    rng: np.random.Generator
        Seeded generator; the result is deterministic given its state.
    """
    data = np.asarray(data, dtype=float)
    if data.ndim != 1 or data.size < 2:
        raise ValueError(f"Need a 1-d sample of at least 2 values, got shape {data.shape}")
    vals = np.zeros(nrand)
    for i in range(nrand):
        ind = rng.integers(0, data.size, size=data.size)
        vals[i] = statistic(data[ind])
    return float(vals.std())


def resample_cells(raw: dict, rng: np.random.Generator) -> dict:
    """Resample every cell's realizations with replacement, keeping cell sizes."""
    out = {}
    for key in sorted(raw):
        values = np.asarray(raw[key], dtype=float)
        out[key] = values[rng.integers(0, values.size, size=values.size)]
    return out
