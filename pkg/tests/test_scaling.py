import logging

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from core.scaling import (
    bootstrap_nu,
    candidate_grid,
    density_slopes,
    extrapolate_nu,
    extrapolation_points,
    fit_collapse,
    fit_gradvar_collapse,
    moving_average,
    mutual_info_peak,
    rescale,
    size_crossing,
    steady_state_report,
)
from core.synthetic import PLANTED_NU, PLANTED_P_C, synthetic_collapse_table, synthetic_gradvar_table
from core.tables import EnsembleTable

P_GRID = [round(0.05 * k, 10) for k in range(13)]


@pytest.fixture(scope="module")
def noisy_table():
    return synthetic_collapse_table(noise=0.01, seed=4)


@pytest.fixture(scope="module")
def noisy_fit(noisy_table):
    return fit_collapse(noisy_table)


def test_rescale_critical_row_maps_to_origin(noisy_table):
    points = rescale(noisy_table, 0.3, 1.2)
    at_pc = points[np.isclose(points["p"], 0.3)]
    assert np.all(at_pc["x"] == 0.0)
    assert np.allclose(at_pc["y"], 0.0, atol=1e-15)


def test_rescale_size_ratio():
    table = synthetic_collapse_table(sizes=(4, 8), noise=0.0, samples=2)
    points = rescale(table, 0.3, 1.5)
    x4 = points[(points["N"] == 4) & np.isclose(points["p"], 0.5)]["x"].item()
    x8 = points[(points["N"] == 8) & np.isclose(points["p"], 0.5)]["x"].item()
    assert x8 / x4 == pytest.approx(2 ** (1 / 1.5))


def test_rescale_interpolates_off_grid_critical_point(noisy_table):
    points = rescale(noisy_table, 0.275, 1.3)
    assert len(points) == len(noisy_table.rows)


@pytest.mark.parametrize("p_c,nu", [(0.3, 0.0), (0.3, -1.0), (0.9, 1.3)])
def test_rescale_rejects_bad_arguments(noisy_table, p_c, nu):
    with pytest.raises(ValueError):
        rescale(noisy_table, p_c, nu)


def test_fit_recovers_planted_exponents(noisy_fit):
    assert abs(noisy_fit.p_c - PLANTED_P_C) <= 0.05 + 1e-9
    assert abs(noisy_fit.nu - PLANTED_NU) <= 0.15
    assert len(noisy_fit.poly_coeffs) == 6
    assert noisy_fit.chi2 >= 0.0


def test_reported_optimum_has_smallest_chi2(noisy_fit):
    assert all(noisy_fit.chi2 <= chi2 for _, _, chi2 in noisy_fit.candidates)


def test_fit_is_deterministic(noisy_table):
    a = fit_collapse(noisy_table, [0.25, 0.3])
    b = fit_collapse(noisy_table, [0.25, 0.3])
    assert a == b


def entropy_table(surface, sizes=(6, 8, 10, 12), stderr=0.01):
    rows = pd.DataFrame([
        {"family": "xxz_hva", "N": n, "p": p, "L": 16, "R": 500, "mean": surface(n, p),
         "std": stderr * np.sqrt(500), "stderr": stderr}
        for n in sizes for p in P_GRID
    ])
    return EnsembleTable("entropy", rows)


def volume_to_area(n, p):
    # Page-like volume law below p = 0.2, N-independent area law above
    return 0.5 * n * (1.0 - p / 0.2) - 0.5 if p < 0.2 else 0.3


def test_candidate_grid_is_a_refined_window_around_the_crossing(noisy_table):
    grid = candidate_grid(noisy_table)
    assert {0.2875, PLANTED_P_C, 0.3125} <= set(grid)
    assert min(grid) >= 0.1 - 1e-9 and max(grid) <= 0.5 + 1e-9
    assert len(grid) <= 21


def test_noiseless_density_curves_cross_at_planted_point():
    low, high = size_crossing(synthetic_collapse_table(noise=0.0, samples=2))
    assert low <= PLANTED_P_C <= high
    assert high - low == pytest.approx(0.05)


def test_crossing_from_volume_law_to_area_law():
    table = entropy_table(volume_to_area)
    slopes = density_slopes(table)
    assert slopes.loc[0.1] > 0 > slopes.loc[0.3]
    assert size_crossing(table) == (0.15, 0.2)
    grid = candidate_grid(table)
    assert grid[0] == pytest.approx(0.05) and grid[-1] == pytest.approx(0.3)
    assert 0.0 not in grid


def test_candidate_grid_without_crossing_scans_interior(caplog):
    table = entropy_table(lambda n, p: 1.0 - p)
    with caplog.at_level(logging.WARNING):
        grid = candidate_grid(table)
    assert grid == P_GRID[1:-1]
    assert "do not cross" in caplog.text


def test_fit_needs_three_sizes():
    table = synthetic_collapse_table(sizes=(6, 8), noise=0.0, samples=2)
    with pytest.raises(ValueError):
        fit_collapse(table)


def test_fit_needs_eight_rates():
    table = synthetic_collapse_table(p_grid=[0.1, 0.2, 0.3, 0.4, 0.5], noise=0.0, samples=2)
    with pytest.raises(ValueError):
        fit_collapse(table)


def test_bootstrap_vanishes_without_noise():
    table = synthetic_collapse_table(sizes=(6, 8, 10), p_grid=P_GRID[1:11], noise=0.0, samples=4)
    assert bootstrap_nu(table, 0.3, k_boot=5, seed=1) < 1e-3


def test_bootstrap_needs_raw_samples(noisy_table):
    stripped = EnsembleTable(noisy_table.kind, noisy_table.rows, noisy_table.metadata)
    with pytest.raises(ValueError):
        bootstrap_nu(stripped, 0.3, k_boot=2)


def test_bootstrap_is_seeded(noisy_table):
    small = noisy_table.select_sizes([6, 8, 10])
    assert bootstrap_nu(small, 0.3, k_boot=4, seed=2) == bootstrap_nu(small, 0.3, k_boot=4, seed=2)


def test_extrapolation_of_exact_linear_data():
    fit = extrapolate_nu([(n, 1.0 + 2.0 / n, 0.01) for n in (6, 8, 10, 12)])
    assert fit.slope == pytest.approx(2.0, abs=1e-10)
    assert fit.intercept == pytest.approx(1.0, abs=1e-10)


def test_extrapolation_of_constant_data():
    fit = extrapolate_nu([(8, 1.3, 0.02), (10, 1.3, 0.05), (12, 1.3, 0.01)])
    assert fit.slope == pytest.approx(0.0, abs=1e-10)
    assert fit.nu_infinity == pytest.approx(1.3, abs=1e-10)


@settings(max_examples=50, deadline=None)
@given(a=st.floats(-5, 5), b=st.floats(0.2, 3),
       errs=st.lists(st.floats(0.001, 0.5), min_size=4, max_size=4))
def test_extrapolation_exact_for_any_weights(a, b, errs):
    points = [(n, a / n + b, e) for n, e in zip((8, 10, 12, 14), errs)]
    fit = extrapolate_nu(points)
    assert fit.intercept == pytest.approx(b, abs=1e-9)
    assert fit.slope == pytest.approx(a, abs=1e-8)


def test_extrapolation_preconditions(caplog):
    with pytest.raises(ValueError):
        extrapolate_nu([(8, 1.2, 0.1), (10, 1.3, 0.1)])
    with pytest.raises(ValueError):
        extrapolate_nu([(10, 1.2, 0.1), (10, 1.3, 0.1), (10, 1.25, 0.1)])
    with caplog.at_level(logging.WARNING):
        fit = extrapolate_nu([(8, 1.2, None), (10, 1.3, 0.1), (12, 1.35, 0.1)])
    assert not fit.weighted


def test_extrapolation_points_use_upper_half_of_sizes(noisy_table):
    points = extrapolation_points(noisy_table, 0.3)
    assert [n for n, _, _ in points] == [8, 10, 12]
    assert all(err is None for _, _, err in points)


def test_gradvar_fit_recovers_planted_exponent():
    table = synthetic_gradvar_table(nu=1.3, p_c=0.5)
    fit = fit_gradvar_collapse(table, 0.5)
    assert fit.nu == pytest.approx(1.3, abs=0.05)
    assert set(fit.plateau) == {6, 8, 10, 12}


def test_gradvar_fit_with_global_constant():
    table = synthetic_gradvar_table(nu=1.3, p_c=0.5)
    fit = fit_gradvar_collapse(table, 0.5, per_size_constant=False)
    assert len(set(fit.plateau.values())) == 1
    assert fit.nu == pytest.approx(1.3, abs=0.05)


def test_gradvar_fit_drops_non_positive_cells(caplog):
    table = synthetic_gradvar_table()
    rows = table.rows.copy()
    rows.loc[0, "mean"] = 0.0
    broken = EnsembleTable("grad_variance", rows, {})
    with caplog.at_level(logging.WARNING):
        fit = fit_gradvar_collapse(broken, 0.5)
    assert "non-positive" in caplog.text
    assert fit.nu > 0


def mutinfo_table(values, stderr=0.01, n=12, r=3):
    rows = pd.DataFrame({
        "family": "hea", "N": n, "p": P_GRID[:len(values)], "r": r, "L": 16, "R": 500,
        "mean": values, "std": stderr * np.sqrt(500), "stderr": stderr,
    })
    return EnsembleTable("mutual_info", rows)


def test_mutual_info_peak_on_unimodal_curve():
    values = np.exp(-((np.array(P_GRID) - 0.3) ** 2) / 0.02)
    peak = mutual_info_peak(mutinfo_table(values), 12, 3)
    assert peak.p_peak == pytest.approx(0.3)
    assert not peak.low_confidence


def test_flat_mutual_info_is_low_confidence():
    values = 0.1 + 0.001 * np.sin(np.arange(13))
    peak = mutual_info_peak(mutinfo_table(values, stderr=0.05))
    assert peak.low_confidence


def test_mutual_info_peak_needs_eight_rates():
    with pytest.raises(ValueError):
        mutual_info_peak(mutinfo_table(np.ones(6)))


def test_moving_average_ends():
    assert np.allclose(moving_average([0.0, 3.0, 6.0]), [1.5, 3.0, 4.5])


def test_steady_state_report():
    layers = np.arange(1, 17)
    flat = pd.DataFrame({"N": 8, "p": 0.1, "layer": layers, "mean": np.r_[np.linspace(0, 2, 12), [2.0] * 4],
                         "std": 0.1, "stderr": 0.01})
    growing = pd.DataFrame({"N": 8, "p": 0.2, "layer": layers, "mean": 0.1 * layers, "std": 0.1,
                            "stderr": 0.001})
    report = steady_state_report(pd.concat([flat, growing]))
    assert report.set_index("p").loc[0.1, "plateau"]
    assert not report.set_index("p").loc[0.2, "plateau"]
