"""
Monitored evolution: seeded trajectories with random Z measurements after each
layer, and deterministic replay of a recorded branch.
"""
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from core.circuits import CircuitSpec, GateShift
from core.entanglement import half_chain_entropy
from core.errors import InconsistentBranchError
from core.statevector import StateVector, apply_matrix, gate_matrix, measure_amplitudes

Site = Tuple[int, int]

# Leading spawn-key entries, one per kind of seeded task.
ENTROPY_TAG = 0
MUTINFO_TAG = 1
GRADVAR_TAG = 2
BOOTSTRAP_TAG = 3
GRADCHECK_TAG = 4


def derive_seed(base_seed: int, *key: int) -> int:
    """64-bit seed for the task at position `key`; independent of execution order."""
    if base_seed < 0:
        raise ValueError(f"base_seed must be non-negative, got {base_seed}")
    seq = np.random.SeedSequence(entropy=int(base_seed), spawn_key=tuple(int(k) for k in key))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


def p_key(p: float) -> int:
    """Integer key for a measurement rate (micro-units)."""
    return int(round(p * 1_000_000))


@dataclass(frozen=True)
class MeasurementRecord:
    sites: Tuple[Site, ...]
    outcomes: Tuple[int, ...]
    branch_probability: float
    rng_seed: Optional[int] = None

    def __post_init__(self):
        if len(self.sites) != len(self.outcomes):
            raise ValueError("sites and outcomes must have equal length")

    @property
    def num_measurements(self) -> int:
        return len(self.sites)


@dataclass(frozen=True)
class TrajectoryResult:
    final_state: StateVector
    record: MeasurementRecord
    per_layer_entropy: Optional[Tuple[float, ...]] = None


@dataclass(frozen=True)
class BranchReplay:
    """Replayed branch. `state` is None when the branch has zero probability."""
    state: Optional[StateVector]
    probability: float

    @property
    def feasible(self) -> bool:
        return self.state is not None


def initial_amplitudes(circuit: CircuitSpec) -> np.ndarray:
    n = circuit.num_qubits
    amps = StateVector.zeros(n).amplitudes
    for gate in circuit.preparation:
        amps = apply_matrix(amps, n, gate_matrix(gate.kind, gate.angle), gate.qubits)
    return amps


def apply_layer(amps: np.ndarray, circuit: CircuitSpec, layer: int,
                shift: Optional[GateShift] = None) -> np.ndarray:
    n = circuit.num_qubits
    for pos, gate in enumerate(circuit.layers[layer]):
        theta = circuit.angle(gate, (layer, pos), shift) if gate.kind.parameterized else None
        amps = apply_matrix(amps, n, gate_matrix(gate.kind, theta), gate.qubits)
    return amps


def unitary_state(circuit: CircuitSpec, shift: Optional[GateShift] = None) -> StateVector:
    """Output of the circuit with no measurements."""
    amps = initial_amplitudes(circuit)
    for d in range(circuit.depth):
        amps = apply_layer(amps, circuit, d, shift)
    return StateVector(amps, circuit.num_qubits)


def run_trajectory(circuit: CircuitSpec, p: float, seed: int, per_layer: bool = False) -> TrajectoryResult:
    """
    After each layer every qubit is selected with probability p (ascending index)
    and measured with a Born-sampled outcome. Both draws consume one generator
    seeded by `seed`, so (circuit, p, seed) fixes the whole result.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"Measurement rate must lie in [0, 1], got {p}")
    n = circuit.num_qubits
    rng = np.random.default_rng(seed)
    amps = initial_amplitudes(circuit)
    sites: List[Site] = []
    outcomes: List[int] = []
    branch_probability = 1.0
    entropies = [] if per_layer else None
    for d in range(circuit.depth):
        amps = apply_layer(amps, circuit, d)
        for q in range(n):
            if rng.random() < p:
                amps, outcome, cond = measure_amplitudes(amps, n, q, rng=rng)
                sites.append((d, q))
                outcomes.append(outcome)
                branch_probability *= cond
        if per_layer:
            entropies.append(half_chain_entropy(StateVector(amps, n)))
    record = MeasurementRecord(tuple(sites), tuple(outcomes), branch_probability, rng_seed=seed)
    return TrajectoryResult(
        StateVector(amps, n), record, tuple(entropies) if per_layer else None
    )


def _sites_by_layer(circuit: CircuitSpec, sites: Iterable[Site]) -> Dict[int, List[int]]:
    by_layer: Dict[int, List[int]] = {}
    seen = set()
    for layer, qubit in sites:
        if not 0 <= layer < circuit.depth:
            raise ValueError(f"Measurement layer {layer} outside 0..{circuit.depth - 1}")
        if not 0 <= qubit < circuit.num_qubits:
            raise ValueError(f"Measurement qubit {qubit} outside 0..{circuit.num_qubits - 1}")
        if (layer, qubit) in seen:
            raise ValueError(f"Duplicate measurement site {(layer, qubit)}")
        seen.add((layer, qubit))
        by_layer.setdefault(layer, []).append(qubit)
    return {layer: sorted(qs) for layer, qs in by_layer.items()}


def canonical_sites(sites: Iterable[Site]) -> Tuple[Site, ...]:
    return tuple(sorted((int(l), int(q)) for l, q in sites))


def replay_branch(circuit: CircuitSpec, sites: Sequence[Site], outcomes: Sequence[int],
                  shift: Optional[GateShift] = None) -> BranchReplay:
    """
    Runs the circuit forcing `outcomes` at `sites`. The probability is the product
    of conditional Born probabilities, i.e. the trace of the unnormalized branch state.
    """
    if len(sites) != len(outcomes):
        raise ValueError("sites and outcomes must have equal length")
    by_layer = _sites_by_layer(circuit, sites)
    forced = {(int(l), int(q)): int(b) for (l, q), b in zip(sites, outcomes)}
    n = circuit.num_qubits
    amps = initial_amplitudes(circuit)
    probability = 1.0
    for d in range(circuit.depth):
        amps = apply_layer(amps, circuit, d, shift)
        for q in by_layer.get(d, ()):
            try:
                amps, _, cond = measure_amplitudes(amps, n, q, forced=forced[(d, q)])
            except InconsistentBranchError:
                return BranchReplay(None, 0.0)
            probability *= cond
    return BranchReplay(StateVector(amps, n), probability)


def sample_branch(circuit: CircuitSpec, sites: Sequence[Site], seed: int,
                  shift: Optional[GateShift] = None) -> TrajectoryResult:
    """Born-samples outcomes at fixed measurement sites."""
    by_layer = _sites_by_layer(circuit, sites)
    rng = np.random.default_rng(seed)
    n = circuit.num_qubits
    amps = initial_amplitudes(circuit)
    visited: List[Site] = []
    outcomes: List[int] = []
    probability = 1.0
    for d in range(circuit.depth):
        amps = apply_layer(amps, circuit, d, shift)
        for q in by_layer.get(d, ()):
            amps, outcome, cond = measure_amplitudes(amps, n, q, rng=rng)
            visited.append((d, q))
            outcomes.append(outcome)
            probability *= cond
    record = MeasurementRecord(tuple(visited), tuple(outcomes), probability, rng_seed=seed)
    return TrajectoryResult(StateVector(amps, n), record)
