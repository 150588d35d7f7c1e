import math
import string

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from core.circuits import build_xxz_hva
from core.entanglement import (
    entropy_result,
    half_chain_entropy,
    mutual_information,
    reduced_density_matrix,
    von_neumann_entropy,
)
from core.errors import SubsystemError
from core.statevector import StateVector, measure_qubit
from core.trajectories import unitary_state

LN2 = math.log(2.0)
BELL = StateVector.from_amplitudes(np.array([1, 0, 0, 1]) / math.sqrt(2))


def dense_reduced(state: StateVector, keep):
    """Partial trace of |ψ><ψ| by an explicit index contraction."""
    n = state.num_qubits
    rho = np.outer(state.amplitudes, state.amplitudes.conj()).reshape((2,) * (2 * n))
    rows = [string.ascii_letters[q] for q in range(n)]
    cols = [string.ascii_letters[n + q] if q in keep else rows[q] for q in range(n)]
    kept = "".join(rows[q] for q in keep) + "".join(cols[q] for q in keep)
    reduced = np.einsum("".join(rows) + "".join(cols) + "->" + kept, rho)
    dim = 1 << len(keep)
    return reduced.reshape(dim, dim)


def test_bell_pair_entropy():
    assert von_neumann_entropy(BELL, [0]) == pytest.approx(LN2, abs=1e-12)
    assert entropy_result(BELL, [1]).bits == pytest.approx(1.0, abs=1e-12)


def test_product_state_has_no_entropy(rng):
    a, b = StateVector.random(1, rng), StateVector.random(2, rng)
    product = StateVector.from_amplitudes(np.kron(a.amplitudes, b.amplitudes))
    assert von_neumann_entropy(product, [0]) == pytest.approx(0.0, abs=1e-10)


@pytest.mark.parametrize("n", [2, 3, 4, 5, 6])
def test_reduced_matrix_matches_dense_partial_trace(rng, n):
    state = StateVector.random(n, rng)
    keep = sorted(int(q) for q in rng.choice(n, size=max(1, n // 2), replace=False))
    assert np.allclose(reduced_density_matrix(state, keep), dense_reduced(state, keep), atol=1e-10)
    lam = np.linalg.eigvalsh(dense_reduced(state, keep))
    lam = lam[lam > 1e-12]
    assert von_neumann_entropy(state, keep) == pytest.approx(-np.sum(lam * np.log(lam)), abs=1e-10)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 7), data=st.data())
def test_pure_state_entropy_symmetry(seed, n, data):
    state = StateVector.random(n, np.random.default_rng(seed))
    size = data.draw(st.integers(1, n - 1))
    sub = data.draw(st.permutations(range(n)))[:size]
    rest = [q for q in range(n) if q not in sub]
    assert von_neumann_entropy(state, sub) == pytest.approx(von_neumann_entropy(state, rest), abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(3, 6))
def test_entropy_bounds_and_subadditivity(seed, n):
    state = StateVector.random(n, np.random.default_rng(seed))
    s0 = von_neumann_entropy(state, [0])
    assert 0.0 <= s0 <= LN2 + 1e-12
    assert von_neumann_entropy(state, [0, 1]) <= s0 + von_neumann_entropy(state, [1]) + 1e-9
    assert mutual_information(state, 0, n - 1) >= 0.0


def test_half_chain_needs_even_size(rng):
    with pytest.raises(ValueError):
        half_chain_entropy(StateVector.random(5, rng))


@pytest.mark.parametrize("subsystem", [[], [0, 0], [0, 1, 2, 3], [4]])
def test_invalid_subsystems(rng, subsystem):
    with pytest.raises(SubsystemError):
        von_neumann_entropy(StateVector.random(4, rng), subsystem)


def test_mutual_information_of_bell_pairs():
    state = unitary_state(build_xxz_hva(6, 1, np.zeros(4)))
    assert mutual_information(state, 0, 1) == pytest.approx(2 * LN2, abs=1e-10)
    assert mutual_information(state, 0, 2) == pytest.approx(0.0, abs=1e-10)
    assert mutual_information(state, 0, 3) == pytest.approx(0.0, abs=1e-10)


def test_two_qubit_mutual_information():
    assert mutual_information(BELL, 0, 1) == pytest.approx(2 * LN2, abs=1e-12)


def test_mutual_information_needs_distinct_sites():
    with pytest.raises(SubsystemError):
        mutual_information(BELL, 1, 1)


def test_product_state_entropy_is_positive_zero():
    value = von_neumann_entropy(StateVector.zeros(4), [0, 1])
    assert value == pytest.approx(0.0, abs=1e-15)
    assert math.copysign(1.0, value) == 1.0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 5), data=st.data())
def test_measured_site_is_disentangled(seed, n, data):
    qubit = data.draw(st.integers(0, n - 1))
    rng = np.random.default_rng(seed)
    post, _, _ = measure_qubit(StateVector.random(n, rng), qubit, rng=rng)
    assert von_neumann_entropy(post, [qubit]) == pytest.approx(0.0, abs=1e-12)
