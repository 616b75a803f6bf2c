import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nplm_gof import InputError
from nplm_gof.diagnostics import (
    classifier_scores,
    corner_data,
    reweight_reference,
    score_reference_band,
    select_top_quantile,
)
from nplm_gof.benchmarks import perturb_mog, random_mog, sample_mog
from nplm_gof.model_selection import heuristic_sigma
from nplm_gof.solver import evaluate_f, fit
from nplm_gof.types import Dataset, NplmConfig, TrainedModel


def _constant_model(value, dim=1):
    return TrainedModel(np.zeros((1, dim)), np.array([value]), 1e8, 10, 10, 10.0, True, 0)


def test_score_examples():
    pts = Dataset(np.random.default_rng(0).normal(size=(5, 1)))
    assert np.all(classifier_scores(_constant_model(0.0), pts) == 0.5)
    assert classifier_scores(_constant_model(math.log(3)), pts) == pytest.approx(0.75, abs=1e-15)


def test_top_quantile_examples():
    pts = Dataset(np.arange(10.0))
    top = select_top_quantile(pts, np.arange(10.0), 0.3)
    assert top.points[:, 0].tolist() == [7.0, 8.0, 9.0]
    assert select_top_quantile(pts, np.arange(10.0), 0.25).n_points == 3
    low = select_top_quantile(pts, np.arange(10.0), 0.2, lowest=True)
    assert low.points[:, 0].tolist() == [0.0, 1.0]


def test_top_quantile_count_and_tie_rules():
    pts = Dataset(np.arange(1000.0))
    assert select_top_quantile(pts, np.arange(1000.0), 0.01).n_points == 10
    assert select_top_quantile(pts, np.zeros(1000), 0.01).points[:, 0].tolist() == list(range(10))
    assert select_top_quantile(pts, np.arange(1000.0), 0.01).points[:, 0].tolist() == list(range(990, 1000))


def test_top_quantile_ties_keep_index_order():
    pts = Dataset(np.arange(6.0))
    out = select_top_quantile(pts, [1.0, 2.0, 2.0, 2.0, 0.0, 2.0], 0.5)
    assert out.points[:, 0].tolist() == [1.0, 2.0, 3.0]


def test_top_quantile_errors():
    pts = Dataset(np.arange(4.0))
    with pytest.raises(InputError):
        select_top_quantile(pts, [1.0, 2.0], 0.5)
    for q in (0.0, 1.0):
        with pytest.raises(InputError):
            select_top_quantile(pts, np.arange(4.0), q)


@given(
    arrays(np.float64, st.integers(2, 40), elements=st.floats(-5, 5)),
    st.floats(0.05, 0.95),
    st.floats(0.1, 10),
)
def test_selection_invariant_under_monotone_rescaling(scores, q, a):
    pts = Dataset(np.arange(float(scores.size)))
    base = select_top_quantile(pts, scores, q)
    mapped = np.tanh(a * scores) * 3 + 1
    rescaled = select_top_quantile(pts, mapped, q)
    # only meaningful while rounding keeps every pairwise order
    if np.array_equal(np.sign(np.subtract.outer(scores, scores)), np.sign(np.subtract.outer(mapped, mapped))):
        assert np.array_equal(base.points, rescaled.points)


def test_reweight_examples():
    pts = Dataset(np.zeros((4, 2)))
    assert np.all(reweight_reference(_constant_model(0.0, 2), pts) == 1.0)
    assert reweight_reference(_constant_model(math.log(2), 2), pts) == pytest.approx(2.0, rel=1e-15)


@pytest.fixture(scope="module")
def shifted_pair():
    rng = np.random.default_rng(11)
    reference = Dataset(rng.normal(size=(20_000, 1)))
    data = Dataset(rng.normal(0.4, 1.0, size=(4000, 1)))
    model = fit(reference, data, NplmConfig(200, 0.7, 1e-7))
    return reference, data, model


def test_reweighted_reference_balances_data_count(shifted_pair):
    reference, data, model = shifted_pair
    w = reweight_reference(model, reference)
    total = w.sum() * data.n_points / reference.n_points
    assert abs(total / data.n_points - 1) < 0.1


def test_band_of_identical_models_has_zero_width():
    pts = Dataset(np.random.default_rng(0).normal(size=(200, 1)))
    model = _constant_model(0.3)
    edges, mean, std = score_reference_band([model, model, model], pts, bins=10)
    assert np.all(std == 0)
    assert mean.sum() == 200 and edges.size == 11


def test_band_with_zero_weights_fills_middle_bin():
    pts = Dataset(np.random.default_rng(0).normal(size=(50, 1)))
    _, mean, std = score_reference_band([_constant_model(0.0)] * 2, pts, bins=4)
    assert mean.tolist() == [0.0, 0.0, 50.0, 0.0]
    with pytest.raises(InputError):
        score_reference_band([_constant_model(0.0)], pts)


def test_discrepant_model_exceeds_null_band():
    rng = np.random.default_rng(5)
    reference = Dataset(rng.normal(size=(5000, 2)))
    cfg = NplmConfig(100, 1.0, 1e-6)
    null_models = [fit(reference, Dataset(rng.normal(size=(500, 2))), cfg) for _ in range(10)]
    data = Dataset(rng.normal([1.0, 0.0], [1.0, 1.5], size=(500, 2)))
    data_model = fit(reference, data, cfg)
    edges, mean, std = score_reference_band(null_models, data, bins=20)
    hist = np.histogram(classifier_scores(data_model, data), bins=edges)[0]
    upper = edges[:-1] >= 0.6
    assert np.any(hist[upper] > (mean + std)[upper])


def test_corner_data_layout():
    rng = np.random.default_rng(1)
    reference, data = Dataset(rng.normal(size=(300, 4))), Dataset(rng.normal(size=(100, 4)))
    selected = data.take(np.arange(10))
    bundle = corner_data(reference, data, selected, 12)
    assert bundle.dim == 4
    for name in ("reference", "data", "selected"):
        assert len(bundle.marginals[name]) == 4
        assert sorted(bundle.pairs[name]) == [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
        assert bundle.pairs[name][(0, 1)].shape == (12, 12)
    assert [int(h.sum()) for h in bundle.marginals["data"]] == [100] * 4
    assert bundle.totals == {"reference": 300.0, "data": 100.0, "selected": 10.0}


def test_corner_data_weighted_reference():
    rng = np.random.default_rng(2)
    reference, data = Dataset(rng.normal(size=(50, 2))), Dataset(rng.normal(size=(20, 2)))
    w = rng.uniform(0.5, 2.0, size=50)
    bundle = corner_data(reference, data, data, 5, reference_weights=w)
    assert bundle.weighted == ("reference",)
    assert bundle.marginals["reference"][0].sum() == pytest.approx(w.sum())
    assert bundle.totals["reference"] == pytest.approx(w.sum())
    with pytest.raises(InputError):
        corner_data(reference, data, data, 5, reference_weights=w[:3])
    with pytest.raises(InputError):
        corner_data(reference, Dataset(np.zeros((3, 3))), data, 5)


def test_scores_order_matches_f_order(shifted_pair):
    reference, data, model = shifted_pair
    f = evaluate_f(model, data)
    s = classifier_scores(model, data)
    assert np.array_equal(np.argsort(f, kind="stable"), np.argsort(s, kind="stable"))


def test_corner_data_single_dimension():
    pts = Dataset(np.random.default_rng(0).normal(size=(30, 1)))
    bundle = corner_data(pts, pts, pts, 4)
    assert len(bundle.marginals["data"]) == 1 and bundle.pairs["data"] == {}


def test_identical_distributions_agree_within_poisson():
    rng = np.random.default_rng(3)
    reference = Dataset(rng.normal(size=(200_000, 2)))
    data = Dataset(rng.normal(size=(100_000, 2)))
    bundle = corner_data(reference, data, data.take(np.arange(10)), 20)
    for i in range(2):
        ref = bundle.marginals["reference"][i] / 2
        dat = bundle.marginals["data"][i]
        assert np.all(np.abs(ref - dat) <= 5 * np.sqrt(np.maximum(dat, 1)))


def test_top_scored_points_localize():
    spec = random_mog(4, 3, 2024)
    reference = sample_mog(spec, 20_000, 1)
    data = sample_mog(perturb_mog(spec, 0.5, seed=1), 2000, 5)
    model = fit(reference, data, NplmConfig(500, heuristic_sigma(reference), 1e-7))
    selected = select_top_quantile(data, classifier_scores(model, data), 0.01)
    bundle = corner_data(reference, data, selected, 10)
    ref_share = []
    for key, sel in bundle.pairs["selected"].items():
        sel = sel.ravel()
        order = np.argsort(-sel, kind="stable")
        k = int(np.searchsorted(np.cumsum(sel[order]) / sel.sum(), 0.5)) + 1
        ref_share.append(bundle.pairs["reference"][key].ravel()[order[:k]].sum() / reference.n_points)
    # half of the selected mass sits where the reference puts under 5% of its own
    assert min(ref_share) < 0.05
