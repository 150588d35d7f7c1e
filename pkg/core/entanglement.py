"""
Entanglement of pure states: reduced density matrices, von Neumann entropy (nats)
and two-site mutual information.
"""
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Tuple

import numpy as np
from scipy import linalg

from core.errors import SubsystemError
from core.statevector import StateVector

MAX_SUBSYSTEM_QUBITS = 12
EIGENVALUE_FLOOR = 1e-12
LN2 = math.log(2.0)


@dataclass(frozen=True)
class EntropyResult:
    value: float
    subsystem: Tuple[int, ...]
    num_qubits: int
    p: Optional[float] = None

    @property
    def bits(self) -> float:
        return self.value / LN2


def check_subsystem(subsystem: Iterable[int], num_qubits: int) -> Tuple[int, ...]:
    sites = tuple(sorted(int(q) for q in subsystem))
    if not sites:
        raise SubsystemError("Subsystem must be non-empty")
    if len(set(sites)) != len(sites):
        raise SubsystemError(f"Subsystem {sites} repeats a qubit")
    if sites[0] < 0 or sites[-1] >= num_qubits:
        raise SubsystemError(f"Subsystem {sites} has qubits outside 0..{num_qubits - 1}")
    if len(sites) >= num_qubits:
        raise SubsystemError("Subsystem must be strictly smaller than the full system")
    return sites


def _schmidt_matrix(state: StateVector, sites: Tuple[int, ...]) -> np.ndarray:
    rest = [q for q in range(state.num_qubits) if q not in sites]
    psi = np.transpose(state.tensor(), list(sites) + rest)
    return psi.reshape(1 << len(sites), 1 << len(rest))


def reduced_density_matrix(state: StateVector, subsystem: Iterable[int]) -> np.ndarray:
    """ρ_A = Tr_{Ā} |ψ><ψ|, indexed with the lowest listed qubit as most significant bit."""
    sites = check_subsystem(subsystem, state.num_qubits)
    if len(sites) > MAX_SUBSYSTEM_QUBITS:
        raise SubsystemError(
            f"Subsystem of {len(sites)} qubits exceeds the {MAX_SUBSYSTEM_QUBITS}-qubit limit"
        )
    m = _schmidt_matrix(state, sites)
    rho = m @ m.conj().T
    return 0.5 * (rho + rho.conj().T)


def entropy_from_spectrum(eigenvalues: np.ndarray) -> float:
    lam = np.asarray(eigenvalues, dtype=float)
    lam = lam[lam > EIGENVALUE_FLOOR]
    return float(max(0.0, -np.sum(lam * np.log(lam))))


def von_neumann_entropy(state: StateVector, subsystem: Iterable[int]) -> float:
    """S(A) = -Σ λ ln λ. Uses the smaller side of the cut (pure-state symmetry)."""
    sites = check_subsystem(subsystem, state.num_qubits)
    if 2 * len(sites) > state.num_qubits:
        sites = tuple(q for q in range(state.num_qubits) if q not in sites)
    rho = reduced_density_matrix(state, sites)
    return entropy_from_spectrum(linalg.eigvalsh(rho))


def half_chain_entropy(state: StateVector) -> float:
    n = state.num_qubits
    if n % 2:
        raise ValueError(f"Half-chain entropy needs even N, got {n}")
    return von_neumann_entropy(state, range(n // 2))


def entropy_result(state: StateVector, subsystem: Iterable[int], p: Optional[float] = None) -> EntropyResult:
    sites = check_subsystem(subsystem, state.num_qubits)
    return EntropyResult(von_neumann_entropy(state, sites), sites, state.num_qubits, p)


def mutual_information(state: StateVector, a: int, b: int) -> float:
    """I(a:b) = S(a) + S(b) - S(ab), clamped at 0."""
    if a == b:
        raise SubsystemError("Mutual information needs two distinct qubits")
    # a two-qubit pure state has S(ab) = 0
    joint = von_neumann_entropy(state, (a, b)) if state.num_qubits > 2 else 0.0
    value = von_neumann_entropy(state, (a,)) + von_neumann_entropy(state, (b,)) - joint
    return max(value, 0.0)
