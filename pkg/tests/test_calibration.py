import warnings

import numpy as np
import pytest
from scipy import stats

from nplm_gof import CalibrationError, FingerprintMismatch, InputError, NumericalError
from nplm_gof.calibration import (
    ResamplingMode,
    ResamplingPolicy,
    cached_null,
    calibrate_null,
    config_fingerprint,
    draw_toys,
    fit_chi2_dof,
    ks_compatibility,
    run_validation,
    summarize,
)
from nplm_gof.io import dumps
from nplm_gof.testing import make_report
from nplm_gof.types import Dataset, Direction, NplmConfig, NullModel

CFG = NplmConfig(60, 1.0, 1e-5)


@pytest.fixture(scope="module")
def small():
    rng = np.random.default_rng(12)
    reference = Dataset(rng.normal(size=(2000, 2)), label="ref")
    pool = Dataset(rng.normal(size=(20_000, 2)), label="pool")
    return reference, pool


def test_dof_fit_recovers_chi2_10():
    t = stats.chi2(10).rvs(2000, random_state=np.random.default_rng(1))
    assert 9.5 <= fit_chi2_dof(t) <= 10.5


def test_dof_fit_recovers_large_dof():
    t = stats.chi2(98.3).rvs(5000, random_state=np.random.default_rng(2))
    assert 95 <= fit_chi2_dof(t) <= 101.5


def test_dof_fit_degenerate_sample_falls_back_to_mean():
    assert fit_chi2_dof(np.full(50, 7.0)) == 7.0


def test_dof_fit_ignores_non_positive_values_for_mle():
    t = stats.chi2(6).rvs(3000, random_state=np.random.default_rng(3))
    with_neg = np.concatenate([t, [-1.0, -0.5, 0.0]])
    assert fit_chi2_dof(with_neg) == fit_chi2_dof(t)


def test_dof_fit_errors():
    with pytest.raises(InputError):
        fit_chi2_dof(-np.ones(30))
    with pytest.raises(InputError):
        fit_chi2_dof(np.ones(5))


def test_ks_uniform_under_correct_dof():
    rng = np.random.default_rng(4)
    ps = [ks_compatibility(stats.chi2(20).rvs(1000, random_state=rng), 20.0) for _ in range(200)]
    assert 0.35 <= np.median(ps) <= 0.65


def test_ks_detects_wrong_dof():
    t = stats.chi2(20).rvs(1000, random_state=np.random.default_rng(5))
    assert ks_compatibility(t, 5.0) < 1e-6


def test_ks_best_case_grid():
    n = 200
    t = stats.chi2(7).ppf((np.arange(1, n + 1) - 0.5) / n)
    assert ks_compatibility(t, 7.0) > 0.999


def test_dof_fit_then_ks_rarely_rejects():
    rng = np.random.default_rng(6)
    ps = []
    for _ in range(100):
        t = stats.chi2(15).rvs(300, random_state=rng)
        ps.append(ks_compatibility(t, fit_chi2_dof(t)))
    assert np.mean(np.array(ps) > 0.01) >= 0.98


def test_partition_toys_are_disjoint(small):
    _, pool = small
    toys, overlapping = draw_toys(pool, ResamplingPolicy("partition", 500), 3, range(10), 10)
    assert not overlapping
    rows = np.vstack([t.points for t in toys])
    assert len(np.unique(rows, axis=0)) == 5000


def test_toys_depend_only_on_master_seed_and_index(small):
    _, pool = small
    policy = ResamplingPolicy("bootstrap", 100)
    all_toys, _ = draw_toys(pool, policy, 9, range(6), 6)
    some, _ = draw_toys(pool, policy, 9, [4, 1], 6)
    assert np.array_equal(some[0].points, all_toys[4].points)
    assert np.array_equal(some[1].points, all_toys[1].points)


def test_small_pool_flags_overlap(small):
    reference, _ = small
    _, overlapping = draw_toys(reference, ResamplingPolicy("partition", 500), 0, range(10), 10)
    assert overlapping
    with pytest.raises(InputError):
        draw_toys(reference, ResamplingPolicy("partition", 5000), 0, range(1), 1)


def test_policy_validation():
    assert ResamplingPolicy("bootstrap", 3).mode is ResamplingMode.BOOTSTRAP
    with pytest.raises(InputError):
        ResamplingPolicy("partition", 0)


def test_fingerprint_tracks_configuration(small):
    reference, _ = small
    base, fields = config_fingerprint(CFG, reference, 200)
    assert config_fingerprint(NplmConfig(60, 1.0, 1e-5, master_seed=99), reference, 200)[0] == base
    assert config_fingerprint(NplmConfig(61, 1.0, 1e-5), reference, 200)[0] != base
    assert config_fingerprint(NplmConfig(60, 1.0, 1e-6), reference, 200)[0] != base
    assert config_fingerprint(CFG, reference, 201)[0] != base
    assert config_fingerprint(CFG, reference.take(np.arange(1999)), 200)[0] != base
    assert set(fields) >= {"n_centers", "kernel_width", "regularization", "ref_count", "toy_size", "standardize", "version"}


def test_calibration_is_deterministic_and_worker_independent(small):
    reference, pool = small
    policy = ResamplingPolicy("partition", 200)
    a = calibrate_null(reference, pool, CFG, policy, 24)
    b = calibrate_null(reference, pool, CFG, policy, 24, workers=2)
    assert dumps(a) == dumps(b)
    assert a.n_toys == 24 and np.all(np.diff(a.toy_values) >= 0)
    assert a.chi2_dof > 0 and 0 <= a.ks_pvalue <= 1


def test_calibration_flags_reference_as_pool(small):
    reference, _ = small
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        null = calibrate_null(reference, reference, CFG, ResamplingPolicy("partition", 200), 20)
    assert any("overlap" in w for w in null.warnings)


def test_calibration_warns_when_unbalanced(small):
    reference, pool = small
    with pytest.warns(RuntimeWarning, match="subdominant"):
        calibrate_null(reference, pool, CFG, ResamplingPolicy("partition", 500), 20)


def test_calibration_rejects_too_many_failures(small, monkeypatch):
    from nplm_gof import calibration

    reference, pool = small
    calls = iter(range(1000))

    class _Converged:
        converged = True

    def flaky(reference, data, config):
        i = next(calls)
        if i % 3 == 0:
            raise NumericalError("non-finite loss at iteration 2")
        return _Converged(), float(i)

    monkeypatch.setattr(calibration, "run_single_test", flaky)
    with pytest.raises(CalibrationError, match="non-finite"):
        calibrate_null(reference, pool, CFG, ResamplingPolicy("partition", 100), 30)


def test_cached_null_reuses_file(small, tmp_path):
    reference, pool = small
    policy = ResamplingPolicy("partition", 200)
    first = cached_null(tmp_path, reference, pool, CFG, policy, 20)
    files = list(tmp_path.glob("null-*.json"))
    assert len(files) == 1
    mtime = files[0].stat().st_mtime_ns
    second = cached_null(tmp_path, reference, pool, CFG, policy, 20)
    assert files[0].stat().st_mtime_ns == mtime
    assert dumps(first) == dumps(second)


def test_validation_rejects_foreign_null(small):
    reference, pool = small
    policy = ResamplingPolicy("partition", 200)
    null = calibrate_null(reference, pool, CFG, policy, 20)
    with pytest.raises(FingerprintMismatch, match="regularization"):
        run_validation(reference, pool, NplmConfig(60, 1.0, 1e-4), null, 2, policy)


def test_validation_under_null_is_centered(small):
    reference, pool = small
    policy = ResamplingPolicy("partition", 200)
    null = calibrate_null(reference, pool, CFG, policy, 40)
    fresh = Dataset(np.random.default_rng(77).normal(size=(40 * 200, 2)))
    summary = run_validation(reference, fresh, CFG, null, 40, policy, workers=2)
    assert -1.0 <= summary.z_median <= 1.0
    assert summary.ci68_low <= summary.z_median <= summary.ci68_high
    assert summary.n_repeats == 40


def test_summary_of_single_repeat_degenerates():
    null = NullModel(np.linspace(1, 20, 20), 8.0, 0.5, 20, "fp")
    rep = make_report(12.0, null)
    s = summarize([rep], Direction.GENERATOR_AS_REFERENCE)
    assert s.z_median == s.ci68_low == s.ci68_high == rep.z_score
    assert s.direction is Direction.GENERATOR_AS_REFERENCE
