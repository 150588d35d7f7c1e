"""
Dense-matrix references for small circuits (N ≤ 6) and the gradient oracle suite.

Gates here are full 2^N x 2^N Kronecker products and measurements are explicit
projectors, so nothing shares code with the tensor-contraction simulator beyond
the 2x2 Pauli constants.
"""
import logging
import math
from dataclasses import asdict, dataclass, field
from functools import reduce
from typing import List, Optional, Sequence, Tuple

import numpy as np

from core.circuits import HEA, XXZ_HVA, CircuitSpec, GateShift, build_circuit, parameter_occurrences, sample_parameters
from core.gradients import (
    SHIFT,
    averaged_expectation,
    branch_expectation,
    branch_gradient,
    ensemble_gradient_exact,
    finite_difference_gradient,
    shifted_branch_expectation,
)
from core.observables import Observable
from core.statevector import HADAMARD, PAULI, GateKind, GateOp
from core.trajectories import GRADCHECK_TAG, canonical_sites, derive_seed, sample_branch

logger = logging.getLogger(__name__)

MAX_ORACLE_QUBITS = 6
MAX_ORACLE_DEPTH = 4
MAX_ORACLE_MEASUREMENTS = 4
MIN_BRANCH_PROBABILITY = 1e-2

_P0 = np.array([[1, 0], [0, 0]], dtype=complex)
_P1 = np.array([[0, 0], [0, 1]], dtype=complex)


def embed(ops: dict, n: int) -> np.ndarray:
    """Kronecker product with ops[q] on qubit q (qubit 0 leftmost) and identity elsewhere."""
    return reduce(np.kron, [ops.get(q, PAULI["I"]) for q in range(n)])


def dense_gate(gate: GateOp, n: int, theta: Optional[float] = None) -> np.ndarray:
    if gate.kind == GateKind.H:
        return embed({gate.qubits[0]: HADAMARD}, n)
    if gate.kind == GateKind.CNOT:
        c, t = gate.qubits
        return embed({c: _P0}, n) + embed({c: _P1, t: PAULI["X"]}, n)
    generator = embed({q: PAULI[letter] for q, letter in zip(gate.qubits, gate.kind.generator)}, n)
    dim = 1 << n
    return math.cos(theta / 2) * np.eye(dim) - 1j * math.sin(theta / 2) * generator


def dense_projector(n: int, qubit: int, outcome: int) -> np.ndarray:
    return embed({qubit: _P1 if outcome else _P0}, n)


def _layer_unitary(circuit: CircuitSpec, layer: int, shift: Optional[GateShift]) -> np.ndarray:
    n = circuit.num_qubits
    u = np.eye(1 << n, dtype=complex)
    for pos, gate in enumerate(circuit.layers[layer]):
        theta = circuit.angle(gate, (layer, pos), shift) if gate.kind.parameterized else None
        u = dense_gate(gate, n, theta) @ u
    return u


def _initial_vector(circuit: CircuitSpec) -> np.ndarray:
    n = circuit.num_qubits
    psi = np.zeros(1 << n, dtype=complex)
    psi[0] = 1.0
    for gate in circuit.preparation:
        psi = dense_gate(gate, n, gate.angle) @ psi
    return psi


def dense_branch(circuit: CircuitSpec, sites: Sequence, outcomes: Sequence[int],
                 shift: Optional[GateShift] = None) -> Tuple[Optional[np.ndarray], float]:
    """(normalized branch vector or None, p_M) from the unnormalized product Π U ... Π U |ψ0>."""
    n = circuit.num_qubits
    forced = dict(zip((tuple(s) for s in sites), outcomes))
    psi = _initial_vector(circuit)
    for d in range(circuit.depth):
        psi = _layer_unitary(circuit, d, shift) @ psi
        for q in range(n):
            if (d, q) in forced:
                psi = dense_projector(n, q, forced[(d, q)]) @ psi
    probability = float(np.vdot(psi, psi).real)
    if probability < 1e-28:
        return None, 0.0
    return psi / math.sqrt(probability), probability


def dense_expectation(vector: np.ndarray, observable: Observable, n: int) -> float:
    return float(np.vdot(vector, observable.matrix(n) @ vector).real)


def channel_expectation(circuit: CircuitSpec, sites: Sequence, observable: Observable) -> float:
    """Tr(ρ O) for the density matrix evolved under ρ → UρU† and dephasing Σ_b Π_b ρ Π_b at each site."""
    n = circuit.num_qubits
    measured = set(canonical_sites(sites))
    psi = _initial_vector(circuit)
    rho = np.outer(psi, psi.conj())
    for d in range(circuit.depth):
        u = _layer_unitary(circuit, d, None)
        rho = u @ rho @ u.conj().T
        for q in range(n):
            if (d, q) in measured:
                p0, p1 = dense_projector(n, q, 0), dense_projector(n, q, 1)
                rho = p0 @ rho @ p0 + p1 @ rho @ p1
    return float(np.trace(rho @ observable.matrix(n)).real)


@dataclass
class InstanceCheck:
    seed: int
    family: str
    num_qubits: int
    depth: int
    param_index: int
    num_measurements: int
    branch_deviation: float
    ensemble_deviation: float
    channel_deviation: float
    dense_deviation: float
    shift_rule_deviation: Optional[float]
    passed: bool


@dataclass
class GradcheckReport:
    sign: str
    num_instances: int
    rel_tol: float
    abs_tol: float
    instances: List[InstanceCheck] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.instances)

    @property
    def failing_seeds(self) -> List[int]:
        return [c.seed for c in self.instances if not c.passed]

    def max_deviation(self, name: str) -> float:
        values = [getattr(c, name) for c in self.instances if getattr(c, name) is not None]
        return max(values, default=0.0)

    def to_dict(self) -> dict:
        return {
            "sign": self.sign,
            "num_instances": self.num_instances,
            "rel_tol": self.rel_tol,
            "abs_tol": self.abs_tol,
            "passed": self.passed,
            "failing_seeds": self.failing_seeds,
            "max_deviation": {
                name: self.max_deviation(name)
                for name in ("branch_deviation", "ensemble_deviation", "channel_deviation",
                             "dense_deviation", "shift_rule_deviation")
            },
            "instances": [asdict(c) for c in self.instances],
        }


def _excess(value: float, reference: float, rel_tol: float, abs_tol: float) -> float:
    """Deviation divided by its allowance; ≤ 1 passes."""
    return abs(value - reference) / max(rel_tol * abs(reference), abs_tol)


def random_instance(seed: int, max_qubits: int = MAX_ORACLE_QUBITS, max_depth: int = MAX_ORACLE_DEPTH,
                    max_measurements: int = MAX_ORACLE_MEASUREMENTS):
    """(circuit, sites, outcomes, l) with a Born-sampled branch at random sites."""
    rng = np.random.default_rng(seed)
    family = (XXZ_HVA, HEA)[int(rng.integers(0, 2))]
    n = int(rng.choice([q for q in (4, 6) if q <= max_qubits] or [max_qubits]))
    depth = int(rng.integers(1, max_depth + 1))
    circuit = build_circuit(family, n, depth, sample_parameters(family, n, depth, rng))
    grid = [(d, q) for d in range(depth) for q in range(n)]
    m = int(rng.integers(0, min(max_measurements, len(grid)) + 1))
    picks = rng.choice(len(grid), size=m, replace=False) if m else []
    sites = canonical_sites(grid[i] for i in picks)
    # low-probability branches have curvature a 1e-5 central difference cannot resolve
    for _ in range(20):
        branch = sample_branch(circuit, sites, int(rng.integers(0, 2**63 - 1)))
        if branch.record.branch_probability >= MIN_BRANCH_PROBABILITY:
            break
    l = int(rng.integers(0, circuit.num_params))
    return circuit, branch.record.sites, branch.record.outcomes, l


def check_instance(seed: int, observable: Observable, sign: str = "minus", rel_tol: float = 1e-6,
                   abs_tol: float = 1e-8, step: float = 1e-5) -> InstanceCheck:
    circuit, sites, outcomes, l = random_instance(seed)
    theta = float(circuit.params[l])
    n = circuit.num_qubits

    bg = branch_gradient(circuit, sites, outcomes, l, observable, sign=sign)
    fd_branch = finite_difference_gradient(
        lambda t: branch_expectation(circuit.with_param(l, t), sites, outcomes, observable), theta, step
    )
    eg = ensemble_gradient_exact(circuit, sites, l, observable)
    fd_avg = finite_difference_gradient(
        lambda t: averaged_expectation(circuit.with_param(l, t), sites, observable), theta, step
    )
    fd_channel = finite_difference_gradient(
        lambda t: channel_expectation(circuit.with_param(l, t), sites, observable), theta, step
    )

    # replayed shifted branch against explicit projector/unitary products
    address = parameter_occurrences(circuit, l)[0]
    e_sim, p_sim = shifted_branch_expectation(circuit, sites, outcomes, l, SHIFT, observable)
    vec, p_dense = dense_branch(circuit, sites, outcomes, GateShift(address, SHIFT))
    if vec is None or e_sim is None:
        dense_dev = abs(p_sim - p_dense)
    else:
        dense_dev = max(abs(e_sim - dense_expectation(vec, observable, n)), abs(p_sim - p_dense))

    shift_rule_dev = None
    if not sites:
        textbook = 0.0
        for addr in parameter_occurrences(circuit, l):
            plus, _ = dense_branch(circuit, (), (), GateShift(addr, SHIFT))
            minus, _ = dense_branch(circuit, (), (), GateShift(addr, -SHIFT))
            textbook += 0.5 * (dense_expectation(plus, observable, n) - dense_expectation(minus, observable, n))
        shift_rule_dev = max(abs(bg.value - textbook), abs(eg.value - textbook))

    branch_x = _excess(bg.value, fd_branch, rel_tol, abs_tol)
    ensemble_x = _excess(eg.value, fd_avg, rel_tol, abs_tol)
    channel_x = _excess(eg.value, fd_channel, rel_tol, abs_tol)
    passed = (
        branch_x <= 1.0 and ensemble_x <= 1.0 and channel_x <= 1.0 and dense_dev <= 1e-10
        and (shift_rule_dev is None or shift_rule_dev <= 1e-12)
    )
    if not passed:
        logger.warning("Gradient oracle mismatch for instance seed %d", seed)
    return InstanceCheck(
        seed=seed,
        family=circuit.family,
        num_qubits=n,
        depth=circuit.depth,
        param_index=l,
        num_measurements=len(sites),
        branch_deviation=abs(bg.value - fd_branch),
        ensemble_deviation=abs(eg.value - fd_avg),
        channel_deviation=abs(eg.value - fd_channel),
        dense_deviation=dense_dev,
        shift_rule_deviation=shift_rule_dev,
        passed=passed,
    )


def run_gradcheck(num_instances: int = 100, seed: int = 0, sign: str = "minus",
                  observable: Optional[Observable] = None, rel_tol: float = 1e-6,
                  abs_tol: float = 1e-8) -> GradcheckReport:
    observable = observable or Observable.zz()
    report = GradcheckReport(sign, num_instances, rel_tol, abs_tol)
    for k in range(num_instances):
        report.instances.append(
            check_instance(derive_seed(seed, GRADCHECK_TAG, k), observable, sign, rel_tol, abs_tol)
        )
    logger.info("Gradient oracle suite: %d/%d instances passed",
                sum(c.passed for c in report.instances), num_instances)
    return report
