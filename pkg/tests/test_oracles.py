import numpy as np
import pytest

from core.circuits import GateShift, parameter_occurrences
from core.gradients import SHIFT, averaged_expectation
from core.observables import Observable
from core.oracles import channel_expectation, dense_branch, dense_expectation, random_instance, run_gradcheck
from core.trajectories import replay_branch

ZZ = Observable.zz()


def test_gradient_oracle_suite_passes():
    report = run_gradcheck(num_instances=25, seed=0)
    assert report.passed, report.failing_seeds
    assert report.max_deviation("dense_deviation") <= 1e-10


def test_unmeasured_instances_reduce_to_shift_rule():
    report = run_gradcheck(num_instances=40, seed=3)
    checked = [c for c in report.instances if c.shift_rule_deviation is not None]
    assert checked
    assert max(c.shift_rule_deviation for c in checked) <= 1e-12


def test_plus_sign_correction_fails_the_suite():
    report = run_gradcheck(num_instances=25, seed=0, sign="plus")
    assert not report.passed
    assert report.failing_seeds


def test_report_serializes():
    report = run_gradcheck(num_instances=2, seed=1)
    data = report.to_dict()
    assert data["num_instances"] == 2
    assert set(data["max_deviation"]) >= {"branch_deviation", "channel_deviation"}


@pytest.mark.parametrize("seed", range(5))
def test_dense_branch_matches_replay(seed):
    circuit, sites, outcomes, l = random_instance(seed)
    shift = GateShift(parameter_occurrences(circuit, l)[0], SHIFT)
    replay = replay_branch(circuit, sites, outcomes, shift)
    vector, probability = dense_branch(circuit, sites, outcomes, shift)
    assert probability == pytest.approx(replay.probability, abs=1e-12)
    if replay.feasible:
        overlap = abs(np.vdot(vector, replay.state.amplitudes))
        assert overlap == pytest.approx(1.0, abs=1e-10)
        assert dense_expectation(vector, ZZ, circuit.num_qubits) == pytest.approx(
            ZZ.expectation(replay.state), abs=1e-10)


@pytest.mark.parametrize("seed", range(5))
def test_channel_equals_branch_mixture(seed):
    circuit, sites, _, _ = random_instance(seed)
    assert channel_expectation(circuit, sites, ZZ) == pytest.approx(
        averaged_expectation(circuit, sites, ZZ), abs=1e-10)


def test_random_instances_respect_oracle_limits():
    for seed in range(20):
        circuit, sites, outcomes, l = random_instance(seed)
        assert circuit.num_qubits <= 6
        assert circuit.depth <= 4
        assert len(sites) == len(outcomes) <= 4
        assert 0 <= l < circuit.num_params
