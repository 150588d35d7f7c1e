"""
Finite-size scaling: data collapse of S(N, p) - S(N, p_c) = f(N^{1/ν}(p - p_c)) with a
degree-5 polynomial f fit by Nelder-Mead χ² minimization, bootstrap errors on ν,
1/N' extrapolation, the gradient-variance collapse and mutual-information peaks.
"""
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from numpy.polynomial import polynomial as P
from scipy.optimize import minimize

from core.resampling import resample_cells
from core.tables import EnsembleTable
from core.trajectories import BOOTSTRAP_TAG, derive_seed

logger = logging.getLogger(__name__)

POLY_DEGREE = 5
NU_START = 1.33
NU_BOUNDS = (0.1, 10.0)
MAX_ITER = 2000
FATOL = 1e-8
XATOL = 1e-6
MAX_RESTARTS = 3
SIGMA_FLOOR = 1e-9
VARIANCE_FLOOR = 1e-300
MIN_SIZES = 3
MIN_P_VALUES = 8


@dataclass
class CollapseFit:
    p_c: float
    nu: float
    poly_coeffs: Tuple[float, ...]
    # g is evaluated at x / x_scale
    x_scale: float
    chi2: float
    dof: int
    converged: bool
    bootstrap_std_nu: Optional[float] = None
    k_boot: int = 0
    candidates: List[Tuple[float, float, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ExtrapolationFit:
    slope: float
    intercept: float
    points: List[Tuple[int, float, Optional[float]]]
    weighted: bool

    @property
    def nu_infinity(self) -> float:
        return self.intercept

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class GradVarCollapseFit:
    p_c: float
    nu: float
    plateau: Dict[int, float]
    chi2: float
    dof: int
    converged: bool
    per_size_constant: bool = True

    def to_dict(self) -> dict:
        out = asdict(self)
        out["plateau"] = {str(k): v for k, v in self.plateau.items()}
        return out


@dataclass
class MutualInfoPeak:
    p_peak: float
    value: float
    low_confidence: bool
    num_qubits: int
    r: Optional[int]


def _sigma(rows: pd.DataFrame, error_column: str) -> np.ndarray:
    return np.maximum(rows[error_column].to_numpy(dtype=float), SIGMA_FLOOR)


def _chi2_weights(sigma: np.ndarray, convention: str) -> np.ndarray:
    if convention == "squared":
        return sigma ** 2
    if convention == "linear":
        return sigma
    raise ValueError(f"Unknown chi2 convention '{convention}'")


def critical_values(table: EnsembleTable, p_c: float) -> Dict[int, float]:
    """S(N, p_c) per size, linearly interpolated on the mean curve."""
    out = {}
    for n, group in table.rows.groupby("N"):
        g = group.sort_values("p")
        p, s = g["p"].to_numpy(dtype=float), g["mean"].to_numpy(dtype=float)
        if not p[0] <= p_c <= p[-1]:
            raise ValueError(f"p_c={p_c} lies outside the sampled range [{p[0]}, {p[-1]}] for N={n}")
        out[int(n)] = float(np.interp(p_c, p, s))
    return out


def rescale(table: EnsembleTable, p_c: float, nu: float) -> pd.DataFrame:
    """Rows of (N, p, x = N^{1/ν}(p - p_c), y = S(N,p) - S(N,p_c), stderr)."""
    if not nu > 0:
        raise ValueError(f"ν must be positive, got {nu}")
    s_c = critical_values(table, p_c)
    rows = table.rows.sort_values(["N", "p"]).reset_index(drop=True)
    n = rows["N"].to_numpy(dtype=float)
    p = rows["p"].to_numpy(dtype=float)
    out = pd.DataFrame({
        "N": rows["N"].astype(int),
        "p": p,
        "x": n ** (1.0 / nu) * (p - p_c),
        "y": rows["mean"].to_numpy(dtype=float) - np.array([s_c[int(k)] for k in n]),
        "stderr": rows["stderr"].to_numpy(dtype=float),
    })
    return out


class _CollapseObjective:
    """χ²(ν, c_0..c_5) at fixed p_c."""

    def __init__(self, table: EnsembleTable, p_c: float, convention: str, error_column: str):
        s_c = critical_values(table, p_c)
        rows = table.rows.sort_values(["N", "p"])
        self.n = rows["N"].to_numpy(dtype=float)
        self.dp = rows["p"].to_numpy(dtype=float) - p_c
        self.y = rows["mean"].to_numpy(dtype=float) - np.array([s_c[int(k)] for k in self.n])
        self.weights = _chi2_weights(_sigma(rows, error_column), convention)

    def scaled_x(self, nu: float) -> Tuple[np.ndarray, float]:
        x = self.n ** (1.0 / nu) * self.dp
        scale = float(np.max(np.abs(x)))
        # keeps g on [-1, 1] so the polynomial is never extrapolated
        return x / scale, scale

    def __call__(self, theta: np.ndarray) -> float:
        nu = theta[0]
        if not NU_BOUNDS[0] < nu < NU_BOUNDS[1]:
            return np.inf
        u, _ = self.scaled_x(nu)
        residual = self.y - P.polyval(u, theta[1:])
        return float(np.sum(residual ** 2 / self.weights))

    def initial_coeffs(self, nu: float) -> np.ndarray:
        u, _ = self.scaled_x(nu)
        return P.polyfit(u, self.y, POLY_DEGREE, w=1.0 / np.sqrt(self.weights))


def _simplex(x0: np.ndarray) -> np.ndarray:
    simplex = np.tile(x0, (x0.size + 1, 1))
    simplex[1, 0] += 0.25
    for i in range(1, x0.size):
        simplex[i + 1, i] += 0.1 * max(abs(x0[i]), 0.1)
    return simplex


def nelder_mead(objective, x0: np.ndarray, max_iter: int = MAX_ITER):
    """
    Nelder-Mead with the standard (1, 2, 0.5, 0.5) coefficients, restarted from the
    best vertex until a restart stops improving χ² by more than FATOL.
    Returns (x, fun, converged).
    """
    best_x, best_f, converged = np.asarray(x0, dtype=float), objective(x0), False
    for _ in range(MAX_RESTARTS):
        res = minimize(
            objective,
            best_x,
            method="Nelder-Mead",
            options={
                "initial_simplex": _simplex(best_x),
                "maxiter": max_iter,
                "maxfev": 4 * max_iter,
                "fatol": FATOL,
                "xatol": XATOL,
            },
        )
        improved = best_f - res.fun
        converged = bool(res.success)
        if res.fun < best_f:
            best_x, best_f = res.x, float(res.fun)
        if improved <= FATOL:
            break
    return best_x, best_f, converged


def _fit_at(table: EnsembleTable, p_c: float, convention: str, error_column: str,
            start: Optional[np.ndarray] = None) -> CollapseFit:
    objective = _CollapseObjective(table, p_c, convention, error_column)
    if start is None:
        start = np.concatenate([[NU_START], objective.initial_coeffs(NU_START)])
    x, chi2, converged = nelder_mead(objective, start)
    _, scale = objective.scaled_x(x[0])
    dof = int(objective.y.size - (POLY_DEGREE + 2))
    return CollapseFit(
        p_c=float(p_c),
        nu=float(x[0]),
        poly_coeffs=tuple(float(c) for c in x[1:]),
        x_scale=scale,
        chi2=float(chi2),
        dof=dof,
        converged=converged,
    )


def density_slopes(table: EnsembleTable) -> pd.Series:
    """Least-squares slope of S/N against N at every p sampled for all sizes."""
    means = table.rows.pivot_table(index="p", columns="N", values="mean").sort_index().dropna()
    sizes = means.columns.to_numpy(dtype=float)
    density = means.to_numpy(dtype=float) / sizes
    centered = sizes - sizes.mean()
    return pd.Series(density @ centered / np.sum(centered ** 2), index=means.index.to_numpy(dtype=float))


def size_crossing(table: EnsembleTable) -> Optional[Tuple[float, float]]:
    """
    Bracket (p_k, p_k+1) where the N-ordering of the S/N curves flips. Noise can
    flip it more than once near the transition; the largest jump in slope wins.
    """
    slopes = density_slopes(table)
    s = slopes.to_numpy()
    flips = np.nonzero(((s[:-1] < 0) & (s[1:] >= 0)) | ((s[:-1] > 0) & (s[1:] <= 0)))[0]
    if flips.size == 0:
        return None
    k = int(flips[np.argmax(np.abs(s[flips + 1] - s[flips]))])
    return float(slopes.index[k]), float(slopes.index[k + 1])


def candidate_grid(table: EnsembleTable, refine: int = 4, window: int = 2) -> List[float]:
    """
    Candidate critical points: a grid refined `refine` times spanning `window`
    sampled steps either side of the S/N crossing, strictly inside the sampled
    range. Without a crossing every interior sampled p is a candidate.
    """
    p = np.array(table.p_values, dtype=float)
    lo, hi = p[0], p[-1]
    for n in table.sizes:
        sampled = table.rows.loc[table.rows["N"] == n, "p"]
        lo, hi = max(lo, float(sampled.min())), min(hi, float(sampled.max()))
    interior = [round(float(v), 10) for v in p if lo < v < hi]
    bracket = size_crossing(table) if p.size >= 3 else None
    if bracket is None:
        logger.warning("S/N curves do not cross; scanning all %d interior p values", len(interior))
        return interior
    step = float(np.min(np.diff(p)))
    start, stop = bracket[0] - window * step, bracket[1] + window * step
    fine = np.arange(start, stop + 1e-12, step / refine)
    candidates = set(v for v in interior if start - 1e-12 <= v <= stop + 1e-12)
    candidates.update(round(float(v), 10) for v in fine)
    logger.info("S/N crossing in [%.4g, %.4g]; scanning p_c in [%.4g, %.4g]", *bracket, start, stop)
    return sorted(v for v in candidates if lo < v < hi)


def fit_collapse(table: EnsembleTable, p_c_candidates: Optional[Sequence[float]] = None,
                 chi2_convention: str = "squared", error_column: str = "stderr") -> CollapseFit:
    """Joint (ν, polynomial) fit for every candidate p_c; the smallest χ² wins."""
    if len(table.sizes) < MIN_SIZES:
        raise ValueError(f"Collapse needs at least {MIN_SIZES} system sizes, got {table.sizes}")
    if len(table.p_values) < MIN_P_VALUES:
        raise ValueError(f"Collapse needs at least {MIN_P_VALUES} p values, got {len(table.p_values)}")
    candidates = list(p_c_candidates) if p_c_candidates is not None else candidate_grid(table)
    if not candidates:
        raise ValueError("No candidate critical points")
    best = None
    scanned = []
    for p_c in candidates:
        fit = _fit_at(table, p_c, chi2_convention, error_column)
        scanned.append((fit.p_c, fit.nu, fit.chi2))
        logger.debug("p_c=%.4f nu=%.4f chi2=%.6g", fit.p_c, fit.nu, fit.chi2)
        if best is None or fit.chi2 < best.chi2:
            best = fit
    best.candidates = scanned
    if not best.converged:
        logger.warning("Nelder-Mead did not converge at p_c=%.4f (best chi2 %.6g)", best.p_c, best.chi2)
    return best


def _bootstrap_refit(table: EnsembleTable, p_c: float, seed: int, start: np.ndarray,
                     convention: str, error_column: str) -> float:
    rng = np.random.default_rng(seed)
    resampled = table.with_samples(resample_cells(table.raw, rng))
    return _fit_at(resampled, p_c, convention, error_column, start=start).nu


def bootstrap_nu(table: EnsembleTable, p_c: float, k_boot: int = 100, seed: int = 0,
                 chi2_convention: str = "squared", error_column: str = "stderr",
                 start_fit: Optional[CollapseFit] = None, threads: int = 1) -> float:
    """Std of ν over k_boot refits on realizations resampled with replacement per cell."""
    if table.raw is None:
        raise ValueError("Bootstrap needs the per-realization values (write tables with --raw)")
    if set(table.raw) != set(table.cell_keys()):
        raise ValueError("Raw samples do not cover every table cell")
    if any(v.size < 2 for v in table.raw.values()):
        raise ValueError("Bootstrap needs at least 2 realizations per cell")
    if start_fit is None:
        start_fit = _fit_at(table, p_c, chi2_convention, error_column)
    start = np.concatenate([[start_fit.nu], start_fit.poly_coeffs])
    nus = Parallel(n_jobs=threads)(
        delayed(_bootstrap_refit)(
            table, p_c, derive_seed(seed, BOOTSTRAP_TAG, k), start, chi2_convention, error_column
        )
        for k in range(k_boot)
    )
    return float(np.std(nus))


def extrapolate_nu(points: Sequence[Tuple[int, float, Optional[float]]], weighted: bool = True) -> ExtrapolationFit:
    """Least squares of ν against 1/N'; the intercept is ν in the thermodynamic limit."""
    points = [(int(n), float(nu), None if err is None else float(err)) for n, nu, err in points]
    if len(points) < 3:
        raise ValueError(f"Extrapolation needs at least 3 values of N', got {len(points)}")
    sizes = np.array([n for n, _, _ in points], dtype=float)
    if np.unique(sizes).size < 2:
        raise ValueError("Degenerate extrapolation: all N' are equal")
    nus = np.array([nu for _, nu, _ in points])
    errs = [err for _, _, err in points]
    w = None
    if weighted:
        if all(e is not None and e > 0 for e in errs):
            w = 1.0 / np.array(errs)
        else:
            logger.warning("Missing or zero bootstrap errors; extrapolating without weights")
            weighted = False
    slope, intercept = np.polyfit(1.0 / sizes, nus, 1, w=w)
    return ExtrapolationFit(float(slope), float(intercept), points, weighted)


def extrapolation_points(table: EnsembleTable, p_c: float, k_boot: int = 0, seed: int = 0,
                         chi2_convention: str = "squared", error_column: str = "stderr",
                         threads: int = 1) -> List[Tuple[int, float, Optional[float]]]:
    """ν(N') from collapses over sizes N ≤ N', for N_max/2 ≤ N' ≤ N_max (≥ 2 sizes each)."""
    sizes = table.sizes
    n_max = sizes[-1]
    points = []
    for n_prime in sizes:
        if n_prime < n_max / 2:
            continue
        subset = [n for n in sizes if n <= n_prime]
        if len(subset) < 2:
            continue
        sub = table.select_sizes(subset)
        fit = _fit_at(sub, p_c, chi2_convention, error_column)
        err = None
        if k_boot and sub.raw is not None:
            err = bootstrap_nu(sub, p_c, k_boot, seed, chi2_convention, error_column,
                               start_fit=fit, threads=threads)
        points.append((n_prime, fit.nu, err))
    return points


class _GradVarObjective:
    """χ² on ln variance against ln(C_N + exp(-|p - p_c| N^{1/ν}))."""

    def __init__(self, rows: pd.DataFrame, p_c: float, per_size: bool, convention: str):
        self.sizes = sorted(int(n) for n in rows["N"].unique())
        self.n = rows["N"].to_numpy(dtype=float)
        self.abs_dp = np.abs(rows["p"].to_numpy(dtype=float) - p_c)
        var = np.maximum(rows["mean"].to_numpy(dtype=float), VARIANCE_FLOOR)
        self.y = np.log(var)
        sigma_ln = np.maximum(rows["stderr"].to_numpy(dtype=float) / var, SIGMA_FLOOR)
        self.weights = _chi2_weights(sigma_ln, convention)
        self.per_size = per_size
        index = {n: i for i, n in enumerate(self.sizes)}
        self.size_index = np.array([index[int(n)] for n in self.n]) if per_size else np.zeros(self.n.size, dtype=int)
        self.min_var = {n: float(np.min(var[self.n == n])) for n in self.sizes}

    def plateau(self, theta: np.ndarray) -> np.ndarray:
        return np.exp(theta[1:])

    def __call__(self, theta: np.ndarray) -> float:
        nu = theta[0]
        if not NU_BOUNDS[0] < nu < NU_BOUNDS[1]:
            return np.inf
        c = self.plateau(theta)[self.size_index]
        model = np.log(c + np.exp(-self.abs_dp * self.n ** (1.0 / nu)))
        return float(np.sum((self.y - model) ** 2 / self.weights))

    def start(self) -> np.ndarray:
        if self.per_size:
            logc = [math.log(max(0.5 * self.min_var[n], VARIANCE_FLOOR)) for n in self.sizes]
        else:
            logc = [math.log(max(0.5 * min(self.min_var.values()), VARIANCE_FLOOR))]
        return np.array([NU_START] + logc)


def fit_gradvar_collapse(table: EnsembleTable, p_c: float, per_size_constant: bool = True,
                         chi2_convention: str = "squared") -> GradVarCollapseFit:
    """Fits ν and the plateau constants of the gradient-variance ansatz at a fixed p_c."""
    rows = table.rows
    bad = rows["mean"] <= 0
    if bad.any():
        logger.warning("Excluding %d non-positive variance cells from the fit", int(bad.sum()))
        rows = rows[~bad]
    if rows.empty:
        raise ValueError("No positive variances to fit")
    objective = _GradVarObjective(rows, p_c, per_size_constant, chi2_convention)
    x, chi2, converged = nelder_mead(objective, objective.start())
    plateau = objective.plateau(x)
    if per_size_constant:
        constants = {n: float(c) for n, c in zip(objective.sizes, plateau)}
    else:
        constants = {n: float(plateau[0]) for n in objective.sizes}
    if not converged:
        logger.warning("Gradient-variance collapse did not converge (chi2 %.6g)", chi2)
    return GradVarCollapseFit(
        p_c=float(p_c),
        nu=float(x[0]),
        plateau=constants,
        chi2=float(chi2),
        dof=int(objective.y.size - x.size),
        converged=converged,
        per_size_constant=per_size_constant,
    )


def moving_average(values: np.ndarray) -> np.ndarray:
    """3-point moving average; the end points average their single neighbor."""
    values = np.asarray(values, dtype=float)
    sums = np.convolve(values, np.ones(3), mode="same")
    counts = np.convolve(np.ones_like(values), np.ones(3), mode="same")
    return sums / counts


def mutual_info_peak(table: EnsembleTable, num_qubits: Optional[int] = None, r: Optional[int] = None,
                     smooth: bool = True) -> MutualInfoPeak:
    """p at the maximum of the (smoothed) mean mutual information curve."""
    rows = table.rows
    if num_qubits is None:
        num_qubits = table.sizes[0]
    rows = rows[rows["N"] == num_qubits]
    if "r" in rows.columns:
        if r is None:
            r = int(rows["r"].min())
        rows = rows[rows["r"] == r]
    rows = rows.sort_values("p")
    if len(rows) < MIN_P_VALUES:
        raise ValueError(f"Peak search needs at least {MIN_P_VALUES} p values, got {len(rows)}")
    mean = rows["mean"].to_numpy(dtype=float)
    curve = moving_average(mean) if smooth else mean
    k = int(np.argmax(curve))
    typical_err = float(np.median(rows["stderr"].to_numpy(dtype=float)))
    low_confidence = bool(curve.max() - curve.min() < 2.0 * typical_err)
    if low_confidence:
        logger.warning("Mutual information is flat within errors at N=%d, r=%s", num_qubits, r)
    return MutualInfoPeak(float(rows["p"].iloc[k]), float(curve[k]), low_confidence, int(num_qubits), r)


def steady_state_report(per_layer: pd.DataFrame, last: int = 4) -> pd.DataFrame:
    """
    Slope of mean entropy over the last `last` layers per (N, p); `plateau` is True
    when the slope is within two standard errors of 0.
    """
    records = []
    for (n, p), group in per_layer.groupby(["N", "p"], sort=True):
        tail = group.sort_values("layer").tail(last)
        layers = tail["layer"].to_numpy(dtype=float)
        sigma = np.maximum(tail["stderr"].to_numpy(dtype=float), SIGMA_FLOOR)
        coeffs, cov = np.polyfit(layers, tail["mean"].to_numpy(dtype=float), 1, w=1.0 / sigma, cov="unscaled")
        slope_err = math.sqrt(max(cov[0, 0], 0.0))
        records.append({
            "N": int(n),
            "p": float(p),
            "slope": float(coeffs[0]),
            "slope_err": slope_err,
            "plateau": bool(abs(coeffs[0]) <= 2.0 * slope_err),
        })
    return pd.DataFrame.from_records(records, columns=["N", "p", "slope", "slope_err", "plateau"])
