"""
Desk-scale acceptance runs. These take minutes to an hour each and are
deselected by default; run them with `pytest -m slow`.
"""
import os

import numpy as np
import pytest

from core.config import ExperimentConfig
from core.ensembles import run_gradvar, run_mutinfo, run_sweep
from core.oracles import run_gradcheck
from core.presets import get_preset
from core.scaling import bootstrap_nu, fit_collapse, mutual_info_peak
from core.synthetic import PLANTED_NU, PLANTED_P_C, synthetic_collapse_table

pytestmark = pytest.mark.slow

THREADS = os.cpu_count() or 1
KINDS = {"sweep": "entropy", "mutinfo": "mutual_info", "gradvar": "grad_variance"}
TRANSITIONS = {"xxz_hva": (0.18, 0.32), "hea": (0.40, 0.60)}


def desk_config(command, family, **overrides):
    preset = get_preset("desk", command, family)
    return ExperimentConfig(family=family, kind=KINDS[command], threads=THREADS, **dict(preset, **overrides))


@pytest.fixture(scope="module")
def collapse_fits():
    fits = {}
    for family in TRANSITIONS:
        table = run_sweep(desk_config("sweep", family), quiet=True).table
        fits[family] = fit_collapse(table)
    return fits


@pytest.mark.parametrize("family", sorted(TRANSITIONS))
def test_desk_scale_transition(collapse_fits, family):
    low, high = TRANSITIONS[family]
    fit = collapse_fits[family]
    assert low <= fit.p_c <= high
    assert 0.8 <= fit.nu <= 2.0


@pytest.mark.parametrize("family", sorted(TRANSITIONS))
def test_mutual_info_peaks_near_critical_point(collapse_fits, family):
    table = run_mutinfo(desk_config("mutinfo", family, r_values=(3,)), quiet=True).table
    peak = mutual_info_peak(table, 12, 3)
    assert abs(peak.p_peak - collapse_fits[family].p_c) <= 0.1


def test_landscape_transition():
    config = desk_config("gradvar", "hea", p_grid=(0.0, 0.8))
    rows = run_gradvar(config, quiet=True).table.rows.set_index(["N", "p"])["mean"]
    assert rows[(6, 0.0)] / rows[(10, 0.0)] >= 2.0
    ratio = rows[(6, 0.8)] / rows[(10, 0.8)]
    assert 1 / 3 <= ratio <= 3


def test_bootstrap_interval_coverage():
    hits = 0
    seeds = range(50)
    for seed in seeds:
        table = synthetic_collapse_table(sizes=(6, 8, 10), noise=0.01, samples=50, seed=seed)
        fit = fit_collapse(table, [PLANTED_P_C])
        std = bootstrap_nu(table, fit.p_c, k_boot=100, seed=seed, start_fit=fit, threads=THREADS)
        hits += abs(fit.nu - PLANTED_NU) <= 2 * std
    assert hits / len(seeds) >= 0.9


def test_full_gradient_oracle_suite():
    report = run_gradcheck(num_instances=100, seed=0)
    assert report.passed, report.failing_seeds


def test_shift_rule_on_fifty_unmeasured_instances():
    checked = []
    seed = 0
    while len(checked) < 50:
        report = run_gradcheck(num_instances=50, seed=seed)
        checked += [c.shift_rule_deviation for c in report.instances if c.shift_rule_deviation is not None]
        seed += 1
    assert np.max(checked[:50]) <= 1e-12
