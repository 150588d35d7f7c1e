"""
Circuit families: XXZ Hamiltonian variational ansatz and hardware efficient ansatz.

A CircuitSpec is a preparation gate list followed by L parameterized layers.
Projective measurements (see core.trajectories) happen after each layer.
"""
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from core.statevector import GateKind, GateOp

XXZ_HVA = "xxz_hva"
HEA = "hea"
TWO_PI = 2.0 * math.pi

# (layer index, position inside the layer)
GateAddress = Tuple[int, int]


@dataclass(frozen=True)
class GateShift:
    """Offset added to the angle of one gate occurrence."""
    address: GateAddress
    delta: float


@dataclass(frozen=True)
class CircuitSpec:
    family: str
    num_qubits: int
    depth: int
    preparation: Tuple[GateOp, ...]
    layers: Tuple[Tuple[GateOp, ...], ...]
    params: np.ndarray = field(repr=False)
    cnot_wrap: bool = True

    def __post_init__(self):
        params = np.array(self.params, dtype=float)
        params.setflags(write=False)
        object.__setattr__(self, "params", params)
        if len(self.layers) != self.depth:
            raise ValueError(f"Expected {self.depth} layers, got {len(self.layers)}")
        for gate in self.gates():
            if any(q >= self.num_qubits for q in gate.qubits):
                raise ValueError(f"Gate {gate} addresses a site outside 0..{self.num_qubits - 1}")
            if gate.param_slot is not None and not 0 <= gate.param_slot < params.size:
                raise ValueError(f"Gate {gate} refers to missing parameter slot")

    @property
    def num_params(self) -> int:
        return int(self.params.size)

    def gates(self):
        yield from self.preparation
        for layer in self.layers:
            yield from layer

    def angle(self, gate: GateOp, address: Optional[GateAddress] = None,
              shift: Optional[GateShift] = None) -> Optional[float]:
        if gate.param_slot is not None:
            theta = float(self.params[gate.param_slot])
        else:
            theta = gate.angle
        if shift is not None and address == shift.address:
            theta += shift.delta
        return theta

    def with_params(self, params) -> "CircuitSpec":
        params = np.asarray(params, dtype=float)
        if params.shape != self.params.shape:
            raise ValueError(f"Expected {self.params.size} parameters, got {params.size}")
        return build_circuit(self.family, self.num_qubits, self.depth, params, cnot_wrap=self.cnot_wrap)

    def with_param(self, slot: int, value: float) -> "CircuitSpec":
        params = self.params.copy()
        params[slot] = value
        return self.with_params(params)


def even_bonds(n: int) -> List[Tuple[int, int]]:
    """(0,1), (2,3), ..."""
    return [(i, (i + 1) % n) for i in range(0, n, 2)]


def odd_bonds(n: int) -> List[Tuple[int, int]]:
    """(1,2), (3,4), ..., (N-1, 0)"""
    return [(i, (i + 1) % n) for i in range(1, n, 2)]


def num_parameters(family: str, n: int, depth: int) -> int:
    if family == XXZ_HVA:
        return 4 * depth
    if family == HEA:
        return 2 * n * depth
    raise ValueError(f"Unknown circuit family '{family}'")


def _check_params(params, expected: int) -> np.ndarray:
    params = np.asarray(params, dtype=float).reshape(-1)
    if params.size != expected:
        raise ValueError(f"Expected {expected} parameters, got {params.size}")
    if not np.all(np.isfinite(params)):
        raise ValueError("Parameters must be finite")
    return params


def _bond_rotations(bonds, zz_slot: int, yyxx_slot: int) -> List[GateOp]:
    gates = []
    for bond in bonds:
        gates.append(GateOp(GateKind.RZZ, bond, param_slot=zz_slot))
        gates.append(GateOp(GateKind.RYY, bond, param_slot=yyxx_slot))
        gates.append(GateOp(GateKind.RXX, bond, param_slot=yyxx_slot))
    return gates


def build_xxz_hva(n: int, depth: int, params: Sequence[float]) -> CircuitSpec:
    """
    Bell pairs on even bonds, then per layer d: ZZ(θ_d), YY(φ_d), XX(φ_d) on odd bonds
    followed by ZZ(β_d), YY(γ_d), XX(γ_d) on even bonds. Slots per layer: θ, φ, β, γ.
    """
    if n < 2 or n % 2:
        raise ValueError(f"XXZ-HVA needs an even number of qubits, got {n}")
    params = _check_params(params, num_parameters(XXZ_HVA, n, depth))
    preparation = []
    for a, b in even_bonds(n):
        preparation.append(GateOp(GateKind.H, (a,)))
        preparation.append(GateOp(GateKind.CNOT, (a, b)))
    layers = []
    for d in range(depth):
        base = 4 * d
        layer = _bond_rotations(odd_bonds(n), base, base + 1)
        layer += _bond_rotations(even_bonds(n), base + 2, base + 3)
        layers.append(tuple(layer))
    return CircuitSpec(XXZ_HVA, n, depth, tuple(preparation), tuple(layers), params)


def build_hea(n: int, depth: int, params: Sequence[float], cnot_wrap: bool = True) -> CircuitSpec:
    """
    H on every qubit, then per layer l: RY(θ_{i,l}), CNOT chain (i, i+1) ascending plus
    (N-1, 0) when `cnot_wrap`, RX(φ_{i,l}). Slots per layer: θ_0..θ_{N-1}, φ_0..φ_{N-1}.
    """
    if n < 2:
        raise ValueError(f"HEA needs at least 2 qubits, got {n}")
    params = _check_params(params, num_parameters(HEA, n, depth))
    preparation = tuple(GateOp(GateKind.H, (q,)) for q in range(n))
    chain = [(i, i + 1) for i in range(n - 1)]
    if cnot_wrap and n > 2:
        chain.append((n - 1, 0))
    layers = []
    for l in range(depth):
        base = 2 * n * l
        layer = [GateOp(GateKind.RY, (q,), param_slot=base + q) for q in range(n)]
        layer += [GateOp(GateKind.CNOT, bond) for bond in chain]
        layer += [GateOp(GateKind.RX, (q,), param_slot=base + n + q) for q in range(n)]
        layers.append(tuple(layer))
    return CircuitSpec(HEA, n, depth, preparation, tuple(layers), params, cnot_wrap=cnot_wrap)


def build_circuit(family: str, n: int, depth: int, params, cnot_wrap: bool = True) -> CircuitSpec:
    if family == XXZ_HVA:
        return build_xxz_hva(n, depth, params)
    if family == HEA:
        return build_hea(n, depth, params, cnot_wrap=cnot_wrap)
    raise ValueError(f"Unknown circuit family '{family}'")


def sample_parameters(family: str, n: int, depth: int, rng: np.random.Generator) -> np.ndarray:
    """All circuit parameters i.i.d. uniform in [0, 2π)."""
    return rng.uniform(0.0, TWO_PI, size=num_parameters(family, n, depth))


def random_circuit(family: str, n: int, depth: int, rng: np.random.Generator,
                   cnot_wrap: bool = True) -> CircuitSpec:
    return build_circuit(family, n, depth, sample_parameters(family, n, depth, rng), cnot_wrap=cnot_wrap)


def parameter_occurrences(circuit: CircuitSpec, slot: int) -> List[GateAddress]:
    """Addresses of every gate driven by parameter `slot`."""
    if not 0 <= slot < circuit.num_params:
        raise ValueError(f"Parameter index {slot} out of range 0..{circuit.num_params - 1}")
    found = []
    for d, layer in enumerate(circuit.layers):
        for pos, gate in enumerate(layer):
            if gate.param_slot == slot:
                found.append((d, pos))
    return found
