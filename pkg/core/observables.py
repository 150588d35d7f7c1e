"""
Pauli-sum observables, e.g. "Z0 Z1" or "0.5*X0 X1 + Y2".
"""
import re
from dataclasses import dataclass
from functools import reduce
from typing import Tuple

import numpy as np

from core.statevector import PAULI, StateVector, apply_matrix, check_qubits

PauliString = Tuple[Tuple[int, str], ...]

_FACTOR_RE = re.compile(r"^([XYZI])(\d+)$")
# split before a sign that is not part of a float exponent
_TERM_SPLIT_RE = re.compile(r"(?<![eE])(?=[+-])")


@dataclass(frozen=True)
class Observable:
    terms: Tuple[Tuple[float, PauliString], ...]

    @classmethod
    def parse(cls, text: str) -> "Observable":
        terms = []
        for raw in _TERM_SPLIT_RE.split(text):
            raw = raw.strip().lstrip("+").strip()
            if not raw:
                continue
            coeff = 1.0
            if "*" in raw:
                head, raw = raw.split("*", 1)
                coeff = float(head.replace(" ", ""))
            elif raw.startswith("-"):
                coeff, raw = -1.0, raw[1:]
            factors = []
            for token in raw.split():
                match = _FACTOR_RE.match(token)
                if not match:
                    raise ValueError(f"Cannot parse Pauli factor '{token}' in '{text}'")
                if match.group(1) != "I":
                    factors.append((int(match.group(2)), match.group(1)))
            qubits = [q for q, _ in factors]
            if len(set(qubits)) != len(qubits):
                raise ValueError(f"Pauli term '{raw}' repeats a qubit")
            terms.append((coeff, tuple(sorted(factors))))
        if not terms:
            raise ValueError(f"Empty observable '{text}'")
        return cls(tuple(terms))

    @classmethod
    def zz(cls, a: int = 0, b: int = 1) -> "Observable":
        return cls(((1.0, ((a, "Z"), (b, "Z"))),))

    @property
    def max_qubit(self) -> int:
        return max((q for _, s in self.terms for q, _ in s), default=-1)

    def expectation(self, state: StateVector) -> float:
        """<ψ|O|ψ>; real because every term is a Hermitian Pauli string."""
        check_qubits([q for _, s in self.terms for q, _ in s], state.num_qubits)
        total = 0.0
        for coeff, string in self.terms:
            phi = state.amplitudes
            for q, letter in string:
                phi = apply_matrix(phi, state.num_qubits, PAULI[letter], (q,))
            total += coeff * float(np.vdot(state.amplitudes, phi).real)
        return total

    def matrix(self, num_qubits: int) -> np.ndarray:
        dim = 1 << num_qubits
        out = np.zeros((dim, dim), dtype=complex)
        for coeff, string in self.terms:
            letters = dict(string)
            factors = [PAULI[letters.get(q, "I")] for q in range(num_qubits)]
            out += coeff * reduce(np.kron, factors)
        return out
