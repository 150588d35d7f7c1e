"""
Gradients of observable expectations through circuits with intermediate projective
measurements.

For one branch with normalized expectation <O> = Tr(ρ̃ O)/p and one gate occurrence
of parameter l shifted by ±π/2:

    d<O>/dθ_l = ½ [ (<O>⁺ - <O>) p⁺/p - (<O>⁻ - <O>) p⁻/p ]

The correction term enters with a minus sign since ∂(1/p) = -∂p/p²; the "+" variant
is kept only as a negative control (sign="plus"). Parameters shared by several
gates (the XXZ-HVA bond angles) sum this over every occurrence. The measurement-
averaged gradient is Σ_i ½(<O>⁺_i p⁺_i - <O>⁻_i p⁻_i); the variance experiment
samples its terms one Born-drawn branch at a time, divided by p_i.
"""
import itertools
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from joblib import Parallel, delayed

from core.circuits import CircuitSpec, GateShift, build_circuit, parameter_occurrences, sample_parameters
from core.config import EXACT_BRANCH_CAP, GRADIENT_ESTIMATORS
from core.errors import ExactEnumerationRefused
from core.observables import Observable
from core.resampling import bootstrap_statistic
from core.trajectories import (
    BOOTSTRAP_TAG,
    GRADVAR_TAG,
    canonical_sites,
    derive_seed,
    p_key,
    replay_branch,
    run_trajectory,
    sample_branch,
)

logger = logging.getLogger(__name__)

SHIFT = math.pi / 2
DEFAULT_FD_STEP = 1e-5
SIGNS = ("minus", "plus")


class EnumerationMode(str, Enum):
    EXACT_2M = "EXACT_2M"
    SAMPLED = "SAMPLED"


@dataclass(frozen=True)
class BranchGradient:
    value: float
    param_index: int
    sites: Tuple[Tuple[int, int], ...]
    outcomes: Tuple[int, ...]
    probability: float
    expectation: float
    # one entry per gate occurrence of the parameter
    plus_probabilities: Tuple[float, ...]
    minus_probabilities: Tuple[float, ...]
    plus_expectations: Tuple[Optional[float], ...]
    minus_expectations: Tuple[Optional[float], ...]


@dataclass(frozen=True)
class EnsembleGradient:
    value: float
    param_index: int
    mode: EnumerationMode
    num_measurements: int
    num_branches: int


class VarianceEstimate(NamedTuple):
    variance: float
    stderr: float


def _shift_for(circuit: CircuitSpec, l: int, shift: float, occurrence: int) -> Optional[GateShift]:
    if shift == 0.0:
        return None
    addresses = parameter_occurrences(circuit, l)
    if not addresses:
        raise ValueError(f"Parameter {l} drives no gate")
    return GateShift(addresses[occurrence], shift)


def shifted_branch_expectation(circuit: CircuitSpec, sites: Sequence, outcomes: Sequence[int],
                               l: int, shift: float, observable: Observable,
                               occurrence: int = 0) -> Tuple[Optional[float], float]:
    """
    Replays the branch with occurrence `occurrence` of θ_l moved by `shift`.
    Returns (<O> on the normalized branch state, branch probability); the
    expectation is None when the shifted branch has zero probability.
    """
    replay = replay_branch(circuit, sites, outcomes, _shift_for(circuit, l, shift, occurrence))
    if not replay.feasible:
        logger.debug("Branch infeasible under shift %+.4f of parameter %d", shift, l)
        return None, 0.0
    return observable.expectation(replay.state), replay.probability


def branch_gradient(circuit: CircuitSpec, sites: Sequence, outcomes: Sequence[int], l: int,
                    observable: Observable, sign: str = "minus") -> BranchGradient:
    """d/dθ_l of the normalized expectation Tr(ρ_M O) of one measurement branch."""
    if sign not in SIGNS:
        raise ValueError(f"sign must be one of {SIGNS}")
    expectation, probability = shifted_branch_expectation(circuit, sites, outcomes, l, 0.0, observable)
    if expectation is None:
        raise ValueError("Cannot differentiate a zero-probability branch")
    correction = -expectation if sign == "minus" else expectation
    plus_p, minus_p, plus_e, minus_e = [], [], [], []
    value = 0.0
    for k in range(len(parameter_occurrences(circuit, l))):
        e_plus, p_plus = shifted_branch_expectation(circuit, sites, outcomes, l, SHIFT, observable, k)
        e_minus, p_minus = shifted_branch_expectation(circuit, sites, outcomes, l, -SHIFT, observable, k)
        # zero-probability shifted branches carry weight p± = 0
        if e_plus is not None:
            value += 0.5 * (e_plus + correction) * p_plus / probability
        if e_minus is not None:
            value -= 0.5 * (e_minus + correction) * p_minus / probability
        plus_p.append(p_plus)
        minus_p.append(p_minus)
        plus_e.append(e_plus)
        minus_e.append(e_minus)
    return BranchGradient(
        value=value,
        param_index=l,
        sites=tuple(tuple(s) for s in sites),
        outcomes=tuple(int(b) for b in outcomes),
        probability=probability,
        expectation=expectation,
        plus_probabilities=tuple(plus_p),
        minus_probabilities=tuple(minus_p),
        plus_expectations=tuple(plus_e),
        minus_expectations=tuple(minus_e),
    )


def _unnormalized_shift_term(circuit: CircuitSpec, sites, outcomes, l: int, observable: Observable) -> float:
    """½ Σ_k (<O>⁺ p⁺ - <O>⁻ p⁻) = d Tr(ρ̃ O)/dθ_l for one branch."""
    total = 0.0
    for k in range(len(parameter_occurrences(circuit, l))):
        for delta in (SHIFT, -SHIFT):
            e, p = shifted_branch_expectation(circuit, sites, outcomes, l, delta, observable, k)
            if e is not None:
                total += math.copysign(0.5, delta) * e * p
    return total


def ensemble_gradient_exact(circuit: CircuitSpec, sites: Sequence, l: int, observable: Observable,
                            cap: int = EXACT_BRANCH_CAP) -> EnsembleGradient:
    """Gradient of the measurement-averaged expectation by enumerating all 2^M branches."""
    sites = canonical_sites(sites)
    m = len(sites)
    if m > cap:
        raise ExactEnumerationRefused(
            f"{m} measurement sites exceed the exact-enumeration cap of {cap}; use SAMPLED mode"
        )
    total = 0.0
    evaluated = 0
    for outcomes in itertools.product((0, 1), repeat=m):
        base = replay_branch(circuit, sites, outcomes)
        if not base.feasible:
            continue
        evaluated += 1
        total += _unnormalized_shift_term(circuit, sites, outcomes, l, observable)
    return EnsembleGradient(total, l, EnumerationMode.EXACT_2M, m, evaluated)


def ensemble_gradient_sampled(circuit: CircuitSpec, sites: Sequence, l: int, observable: Observable,
                              num_samples: int, seed: int) -> EnsembleGradient:
    """Unbiased Monte-Carlo estimate: Born-sampled branches, each weighted by 1/p_M."""
    sites = canonical_sites(sites)
    total = 0.0
    for k in range(num_samples):
        branch = sample_branch(circuit, sites, derive_seed(seed, k))
        record = branch.record
        total += _unnormalized_shift_term(circuit, record.sites, record.outcomes, l, observable) / record.branch_probability
    return EnsembleGradient(total / num_samples, l, EnumerationMode.SAMPLED, len(sites), num_samples)


def branch_expectation(circuit: CircuitSpec, sites, outcomes, observable: Observable) -> float:
    replay = replay_branch(circuit, sites, outcomes)
    if not replay.feasible:
        raise ValueError("Branch has zero probability")
    return observable.expectation(replay.state)


def averaged_expectation(circuit: CircuitSpec, sites, observable: Observable) -> float:
    """Σ_i p_i <O>_i over every outcome string at the given sites."""
    sites = canonical_sites(sites)
    total = 0.0
    for outcomes in itertools.product((0, 1), repeat=len(sites)):
        replay = replay_branch(circuit, sites, outcomes)
        if replay.feasible:
            total += replay.probability * observable.expectation(replay.state)
    return total


def finite_difference_gradient(f: Callable[[float], float], theta: float, step: float = DEFAULT_FD_STEP) -> float:
    """Central difference (f(θ+h) - f(θ-h)) / 2h."""
    if not 1e-7 <= step <= 1e-2:
        raise ValueError(f"Finite-difference step {step} outside [1e-7, 1e-2]")
    return (f(theta + step) - f(theta - step)) / (2.0 * step)


def gradient_sample(family: str, n: int, depth: int, p: float, seed: int, observable: Observable,
                    l: int = 0, cnot_wrap: bool = True, estimator: str = "mixture",
                    sign: str = "minus") -> float:
    """
    One realization: uniform parameters, random sites, one Born-sampled branch.

    estimator="mixture" returns d Tr(ρ̃ O)/dθ_l / p_M for that branch; averaged over
    branches this is the gradient of the measurement-averaged expectation.
    estimator="branch" returns the gradient of the normalized branch expectation,
    which is exactly zero once a later layer measures every qubit.
    """
    if estimator not in GRADIENT_ESTIMATORS:
        raise ValueError(f"Unknown gradient estimator '{estimator}'. Use one of {GRADIENT_ESTIMATORS}.")
    rng = np.random.default_rng(seed)
    params = sample_parameters(family, n, depth, rng)
    circuit = build_circuit(family, n, depth, params, cnot_wrap=cnot_wrap)
    trajectory = run_trajectory(circuit, p, seed=int(rng.integers(0, 2**63 - 1)))
    record = trajectory.record
    if estimator == "branch":
        return branch_gradient(circuit, record.sites, record.outcomes, l, observable, sign=sign).value
    return _unnormalized_shift_term(circuit, record.sites, record.outcomes, l, observable) / record.branch_probability


def variance_estimate(values, rng: np.random.Generator, k_boot: int = 100) -> VarianceEstimate:
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        raise ValueError("Variance needs at least 2 samples")
    if values.size == 2:
        logger.warning("Gradient variance from only 2 samples is low-confidence")
    variance = float(np.var(values, ddof=1))
    stderr = bootstrap_statistic(values, lambda v: np.var(v, ddof=1), k_boot, rng)
    return VarianceEstimate(variance, stderr)


def gradient_variance_experiment(family: str, n: int, depth: int, p: float, num_samples: int,
                                 base_seed: int, observable: Optional[Observable] = None, l: int = 0,
                                 cnot_wrap: bool = True, threads: int = 1, k_boot: int = 100,
                                 estimator: str = "mixture") -> VarianceEstimate:
    """Sample variance of per-realization gradients over random circuits, with a bootstrap error."""
    observable = observable or Observable.zz()
    seeds = [derive_seed(base_seed, GRADVAR_TAG, n, p_key(p), k) for k in range(num_samples)]
    values = Parallel(n_jobs=threads)(
        delayed(gradient_sample)(family, n, depth, p, s, observable, l, cnot_wrap, estimator) for s in seeds
    )
    rng = np.random.default_rng(derive_seed(base_seed, BOOTSTRAP_TAG, n, p_key(p)))
    return variance_estimate(values, rng, k_boot=k_boot)
