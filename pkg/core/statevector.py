"""
Dense statevector substrate: gate set, gate application and Z-basis projective
measurement.

Qubit 0 is the most significant bit of the basis index, i.e. axis 0 of the
(2,)*N amplitude tensor. Pauli rotations follow U(θ) = exp(-i θ/2 A).
"""
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np

from core.errors import InconsistentBranchError

NORM_ATOL = 1e-10
# Forced outcomes below this probability mean the branch replay is inconsistent.
MIN_FORCED_PROBABILITY = 1e-14

_SQRT_HALF = 1.0 / math.sqrt(2.0)

PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}
HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) * _SQRT_HALF
CNOT_MATRIX = np.array(
    [[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex
)


class GateKind(str, Enum):
    RX = "RX"
    RY = "RY"
    RZZ = "RZZ"
    RYY = "RYY"
    RXX = "RXX"
    CNOT = "CNOT"
    H = "H"

    @property
    def arity(self) -> int:
        return 1 if self in (GateKind.RX, GateKind.RY, GateKind.H) else 2

    @property
    def parameterized(self) -> bool:
        return self not in (GateKind.CNOT, GateKind.H)

    @property
    def generator(self) -> Optional[str]:
        """Pauli string A of exp(-i θ/2 A), one letter per addressed qubit."""
        return {
            GateKind.RX: "X",
            GateKind.RY: "Y",
            GateKind.RZZ: "ZZ",
            GateKind.RYY: "YY",
            GateKind.RXX: "XX",
        }.get(self)


@dataclass(frozen=True)
class GateOp:
    kind: GateKind
    qubits: Tuple[int, ...]
    angle: Optional[float] = None
    param_slot: Optional[int] = None

    def __post_init__(self):
        if len(self.qubits) != self.kind.arity:
            raise ValueError(f"{self.kind.value} acts on {self.kind.arity} qubit(s), got {self.qubits}")
        if len(set(self.qubits)) != len(self.qubits):
            raise ValueError(f"{self.kind.value} needs distinct sites, got {self.qubits}")
        if not self.kind.parameterized and (self.angle is not None or self.param_slot is not None):
            raise ValueError(f"{self.kind.value} takes no angle")


@dataclass(frozen=True)
class StateVector:
    amplitudes: np.ndarray
    num_qubits: int

    def __post_init__(self):
        if self.num_qubits < 1:
            raise ValueError(f"num_qubits must be positive, got {self.num_qubits}")
        if self.amplitudes.shape != (1 << self.num_qubits,):
            raise ValueError(
                f"Expected {1 << self.num_qubits} amplitudes, got shape {self.amplitudes.shape}"
            )

    @classmethod
    def zeros(cls, num_qubits: int) -> "StateVector":
        """|0...0>"""
        amps = np.zeros(1 << num_qubits, dtype=complex)
        amps[0] = 1.0
        return cls(amps, num_qubits)

    @classmethod
    def from_amplitudes(cls, amplitudes, normalize: bool = False) -> "StateVector":
        amps = np.asarray(amplitudes, dtype=complex).reshape(-1)
        n = int(round(math.log2(amps.size)))
        if amps.size != 1 << n:
            raise ValueError(f"Amplitude count {amps.size} is not a power of two")
        if normalize:
            amps = amps / np.linalg.norm(amps)
        return cls(amps, n)

    @classmethod
    def random(cls, num_qubits: int, rng: np.random.Generator) -> "StateVector":
        """Haar-random pure state."""
        z = rng.normal(size=1 << num_qubits) + 1j * rng.normal(size=1 << num_qubits)
        return cls(z / np.linalg.norm(z), num_qubits)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def tensor(self) -> np.ndarray:
        return self.amplitudes.reshape((2,) * self.num_qubits)

    def probability_of_one(self, qubit: int) -> float:
        return _probability_of_one(self.amplitudes, self.num_qubits, qubit)


def rotation_matrix(kind: GateKind, angle: float) -> np.ndarray:
    """exp(-i angle/2 A) for the Pauli string A generating `kind`."""
    c, s = math.cos(angle / 2.0), math.sin(angle / 2.0)
    if kind == GateKind.RX:
        return np.array([[c, -1j * s], [-1j * s, c]], dtype=complex)
    if kind == GateKind.RY:
        return np.array([[c, -s], [s, c]], dtype=complex)
    if kind == GateKind.RZZ:
        phase = complex(c, -s)
        return np.diag([phase, phase.conjugate(), phase.conjugate(), phase])
    if kind in (GateKind.RXX, GateKind.RYY):
        pauli = PAULI[kind.generator[0]]
        return c * np.eye(4, dtype=complex) - 1j * s * np.kron(pauli, pauli)
    raise ValueError(f"{kind.value} is not a rotation")


def gate_matrix(kind: GateKind, angle: Optional[float] = None) -> np.ndarray:
    if kind == GateKind.H:
        return HADAMARD
    if kind == GateKind.CNOT:
        return CNOT_MATRIX
    if angle is None or not math.isfinite(angle):
        raise ValueError(f"{kind.value} needs a finite angle, got {angle}")
    return rotation_matrix(kind, angle)


def apply_matrix(amplitudes: np.ndarray, num_qubits: int, matrix: np.ndarray, qubits: Sequence[int]) -> np.ndarray:
    """Contract a 2^k x 2^k matrix into the listed qubit axes; returns a new flat array."""
    k = len(qubits)
    psi = amplitudes.reshape((2,) * num_qubits)
    op = matrix.reshape((2,) * (2 * k))
    out = np.tensordot(op, psi, axes=(list(range(k, 2 * k)), list(qubits)))
    out = np.moveaxis(out, list(range(k)), list(qubits))
    return np.ascontiguousarray(out).reshape(-1)


def check_qubits(qubits: Sequence[int], num_qubits: int):
    for q in qubits:
        if not 0 <= q < num_qubits:
            raise ValueError(f"Qubit index {q} out of range for {num_qubits} qubits")


def apply_gate(state: StateVector, gate: GateOp, angle: Optional[float] = None) -> StateVector:
    """Apply one gate. `angle` overrides gate.angle (used for slot-bound gates)."""
    check_qubits(gate.qubits, state.num_qubits)
    theta = gate.angle if angle is None else angle
    matrix = gate_matrix(gate.kind, theta if gate.kind.parameterized else None)
    amps = apply_matrix(state.amplitudes, state.num_qubits, matrix, gate.qubits)
    return StateVector(amps, state.num_qubits)


def _probability_of_one(amplitudes: np.ndarray, num_qubits: int, qubit: int) -> float:
    view = amplitudes.reshape(1 << qubit, 2, 1 << (num_qubits - qubit - 1))
    return float(np.sum(np.abs(view[:, 1, :]) ** 2))


def project(amplitudes: np.ndarray, num_qubits: int, qubit: int, outcome: int, probability: float) -> np.ndarray:
    """Π_outcome on `qubit`, renormalized by sqrt(probability)."""
    out = amplitudes.reshape(1 << qubit, 2, 1 << (num_qubits - qubit - 1)).copy()
    out[:, 1 - outcome, :] = 0.0
    out /= math.sqrt(probability)
    return out.reshape(-1)


def measure_amplitudes(amplitudes: np.ndarray, num_qubits: int, qubit: int,
                       forced: Optional[int] = None,
                       rng: Optional[np.random.Generator] = None) -> Tuple[np.ndarray, int, float]:
    p1 = min(max(_probability_of_one(amplitudes, num_qubits, qubit), 0.0), 1.0)
    if forced is None:
        if rng is None:
            raise ValueError("Born sampling needs a random generator")
        outcome = int(rng.random() < p1)
    else:
        if forced not in (0, 1):
            raise ValueError(f"Forced outcome must be 0 or 1, got {forced}")
        outcome = int(forced)
    probability = p1 if outcome == 1 else 1.0 - p1
    if probability < MIN_FORCED_PROBABILITY:
        raise InconsistentBranchError(
            f"Outcome {outcome} on qubit {qubit} has probability {probability:.3e}"
        )
    return project(amplitudes, num_qubits, qubit, outcome, probability), outcome, probability


def measure_qubit(state: StateVector, qubit: int, forced: Optional[int] = None,
                  rng: Optional[np.random.Generator] = None) -> Tuple[StateVector, int, float]:
    """
    Z-basis projective measurement. Returns (post-state, outcome, <ψ|Π|ψ>).
    The outcome is Born-sampled from `rng` unless `forced` is given.
    """
    check_qubits((qubit,), state.num_qubits)
    amps, outcome, probability = measure_amplitudes(
        state.amplitudes, state.num_qubits, qubit, forced=forced, rng=rng
    )
    return StateVector(amps, state.num_qubits), outcome, probability
