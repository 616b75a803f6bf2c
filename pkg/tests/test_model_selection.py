import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.spatial.distance import pdist
from scipy.stats import special_ortho_group

from nplm_gof import InputError
from nplm_gof.model_selection import (
    PRESETS,
    ScanResult,
    choose_lambda,
    heuristic_sigma,
    lambda_scan,
    preset_config,
    saturation_m,
    scan_m,
    select_lambda,
    select_sigma,
)
from nplm_gof.benchmarks import perturb_mog, random_mog, sample_mog
from nplm_gof.calibration import ResamplingPolicy, calibrate_null, run_validation
from nplm_gof.types import Dataset, NplmConfig

small_clouds = arrays(np.float64, st.tuples(st.integers(3, 25), st.just(3)), elements=st.floats(-20, 20))


def test_sigma_examples():
    pts = Dataset([[0.0], [1.0], [3.0]])
    assert select_sigma(pts, 100) == 3.0
    assert select_sigma(pts, 90) == pytest.approx(2.8)
    assert select_sigma(pts, 50) == 2.0
    square = Dataset([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
    assert select_sigma(square, 100) == pytest.approx(math.sqrt(2))


def test_two_point_sigma_for_any_percentile():
    pts = Dataset([[0.0, 0.0], [3.0, 0.0]])
    assert {select_sigma(pts, q) for q in (1, 37.5, 90, 100)} == {3.0}


def test_sigma_errors():
    with pytest.raises(InputError):
        select_sigma(Dataset([[1.0, 2.0]]))
    with pytest.raises(InputError):
        select_sigma(Dataset(np.zeros((3, 1))), percentile=0)


@given(small_clouds, arrays(np.float64, 3, elements=st.floats(-100, 100)), st.integers(0, 2**31))
def test_sigma_translation_and_rotation_invariant(pts, shift, seed):
    rot = special_ortho_group.rvs(3, random_state=seed)
    base = select_sigma(Dataset(pts))
    assert select_sigma(Dataset(pts + shift)) == pytest.approx(base, rel=1e-9, abs=1e-9)
    assert select_sigma(Dataset(pts @ rot.T)) == pytest.approx(base, rel=1e-9, abs=1e-9)


@given(small_clouds, st.floats(0.01, 100))
def test_sigma_scales_linearly(pts, c):
    assert select_sigma(Dataset(pts * c)) == pytest.approx(c * select_sigma(Dataset(pts)), rel=1e-12, abs=1e-12)


def test_subsampled_sigma_close_to_full():
    pts = Dataset(np.random.default_rng(2).normal(size=(12_000, 4)))
    full = float(np.percentile(pdist(pts.points), 90))
    assert abs(select_sigma(pts, subsample=2000, seed=5) / full - 1) < 0.1
    assert select_sigma(pts, subsample=2000, seed=5) == select_sigma(pts, subsample=2000, seed=5)


def test_heuristic_sigma_uses_standardized_coordinates():
    pts = np.random.default_rng(0).normal(size=(300, 2))
    stretched = Dataset(pts * [1000.0, 0.001])
    assert heuristic_sigma(stretched) == pytest.approx(heuristic_sigma(Dataset(pts)), rel=1e-2)


def test_presets():
    cfg = preset_config("mog-d4")
    assert (cfg.n_centers, cfg.kernel_width, cfg.regularization) == (10_000, 4.96, 1e-10)
    assert not cfg.standardize
    assert preset_config("flowsim", n_centers=100).n_centers == 100
    assert set(PRESETS) >= {"mog-d4", "mog-d8", "mog-d20", "mog-d30", "flowsim"}
    with pytest.raises(InputError):
        preset_config("nope")


def _scan(lambdas, flags, times):
    return ScanResult([(100, lam) for lam in lambdas], [1.0] * len(lambdas), list(times), list(flags), list(times))


def test_choose_smallest_stable_lambda():
    scan = _scan([1e-4, 1e-6, 1e-8], ["ok", "ok", "non-finite:2"], [0.1, 0.2, 0.3])
    assert choose_lambda(scan, 10.0) == 1e-6
    assert choose_lambda(_scan([1e-6], ["ok"], [0.1]), 10.0) == 1e-6


def test_choose_lambda_respects_budget():
    scan = _scan([1e-4, 1e-6, 1e-8], ["ok"] * 3, [0.1, 1.0, 5.0])
    assert choose_lambda(scan, 2.0) == 1e-6


def test_choose_lambda_falls_back_with_warning():
    scan = _scan([1e-4, 1e-6], ["unconverged:1", "non-finite:1"], [0.1, 0.1])
    with pytest.warns(RuntimeWarning, match="falling back"):
        assert choose_lambda(scan, 10.0) == 1e-4


@given(st.lists(st.floats(0.01, 10), min_size=4, max_size=4), st.floats(0.01, 10), st.floats(0, 10))
def test_chosen_lambda_non_increasing_in_budget(times, budget, extra):
    scan = _scan([1e-3, 1e-5, 1e-7, 1e-9], ["ok"] * 4, times)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert choose_lambda(scan, budget + extra) <= choose_lambda(scan, budget)


@pytest.fixture(scope="module")
def unseen_values():
    # toys carry a value the reference never shows, so the fit runs away as lambda shrinks
    rng = np.random.default_rng(0)
    reference = Dataset(rng.choice([0.0, 1.0], 2000)[:, None])
    pool = Dataset(rng.choice([0.0, 1.0, 5.0], 20_000, p=[0.45, 0.45, 0.1])[:, None])
    return reference, pool


def test_select_lambda_skips_unstable_smallest(unseen_values):
    reference, pool = unseen_values
    base = NplmConfig(20, 0.3, 1e-2, standardize=False, newton_max_iter=4)
    scan = lambda_scan(reference, pool, base, [1e-2, 1e-12], 4, toy_size=200)
    assert scan.flags[0] == "ok" and scan.flags[1].startswith("unconverged")
    assert select_lambda(reference, pool, base, [1e-2, 1e-12], 4, 60.0, toy_size=200) == 1e-2


def test_select_lambda_single_candidate(unseen_values):
    reference, pool = unseen_values
    base = NplmConfig(20, 0.3, 1e-2, standardize=False)
    assert select_lambda(reference, pool, base, [1e-2], 3, 60.0, toy_size=200) == 1e-2


def test_lambda_grid_validation(unseen_values):
    reference, pool = unseen_values
    base = NplmConfig(20, 0.3, 1e-2)
    with pytest.raises(InputError):
        lambda_scan(reference, pool, base, [], 2)
    with pytest.raises(InputError):
        lambda_scan(reference, pool, base, [1e-6, 1e-4], 2)


def test_saturation_on_constructed_scan():
    scan = ScanResult([(m, 1e-6) for m in (10, 20, 40, 80)], [5.0, 9.5, 9.9, 11.0], [0.1] * 4, ["ok"] * 4, [0.1] * 4)
    assert saturation_m(scan) == 80
    scan.flags[3] = "non-finite:1"
    assert saturation_m(scan) == 20
    with pytest.raises(InputError):
        saturation_m(ScanResult([(10, 1e-6)], [1.0], [0.1], ["unconverged:1"], [0.1]))


def test_scan_m_bookkeeping():
    rng = np.random.default_rng(3)
    reference = Dataset(rng.normal(size=(3000, 2)))
    pool = Dataset(rng.normal(size=(30_000, 2)))
    base = NplmConfig(10, 1.0, 1e-6)
    scan = scan_m(reference, pool, base, [20, 50, 100, 200], 6, toy_size=300)
    assert [g[0] for g in scan.grid] == [20, 50, 100, 200]
    assert all(g[1] == 1e-6 for g in scan.grid)
    assert all(np.isfinite(scan.medians)) and scan.n_toys == 6
    assert saturation_m(scan) in (20, 50, 100, 200)
    with pytest.raises(InputError):
        scan_m(reference, pool, base, [50, 20], 2)
    with pytest.raises(InputError):
        scan_m(reference, pool, base, [10**6], 2)


@pytest.fixture(scope="module")
def desk():
    spec = random_mog(4, 3, 2024)
    reference = sample_mog(spec, 20_000, 1)
    return spec, reference, sample_mog(spec, 200_000, 2), heuristic_sigma(reference)


def test_scan_m_saturates_at_desk_scale(desk):
    _, reference, pool, sigma = desk
    scan = scan_m(reference, pool, NplmConfig(500, sigma, 1e-7), [30, 100, 300, 500], 8, toy_size=2000)
    assert all(scan.stable(i) for i in range(4))
    assert abs(scan.medians[-1] - scan.medians[-2]) < 0.1 * abs(scan.medians[-1])
    assert saturation_m(scan) <= 500


def test_too_few_centers_lose_power(desk):
    spec, reference, pool, sigma = desk
    data_pool = sample_mog(perturb_mog(spec, 0.05, seed=1), 100_000, 3)
    policy = ResamplingPolicy("partition", 2000)
    z = {}
    for m in (30, 500):  # sqrt(N) is about 148
        cfg = NplmConfig(m, sigma, 1e-7)
        null = calibrate_null(reference, pool, cfg, policy, 40)
        z[m] = run_validation(reference, data_pool, cfg, null, 15, policy).z_median
    assert z[30] < z[500]
