"""Per-point diagnostics from an already fitted model: classifier scores,
anomaly selection, reference reweighting and corner-plot histograms."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from .errors import InputError
from .solver import clamped_exp, evaluate_f
from .types import Dataset, TrainedModel

DEFAULT_BINS = 40
RANGE_PADDING = 0.01


def classifier_scores(model: TrainedModel, points: Dataset) -> np.ndarray:
    """Sigmoid of the learned log-ratio: near 1 in overdense regions, near 0 in underdense ones."""
    return expit(evaluate_f(model, points))


def select_top_quantile(points: Dataset, scores, q: float, *, lowest: bool = False) -> Dataset:
    """The ``ceil(q * n)`` highest-scored points (lowest with ``lowest=True``).

    Ties keep the original index order.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (points.n_points,):
        raise InputError("need exactly one score per point")
    if not 0.0 < q < 1.0:
        raise InputError(f"q must lie in (0, 1), got {q}")
    k = math.ceil(q * points.n_points)
    key = scores if lowest else -scores
    order = np.argsort(key, kind="stable")[:k]
    return points.take(np.sort(order), label=f"{points.label}:top{q:g}")


def reweight_reference(model: TrainedModel, reference: Dataset) -> np.ndarray:
    """``exp(f(x))`` per reference point, the factor deforming the reference
    density into the learned data density."""
    weights, _ = clamped_exp(evaluate_f(model, reference))
    return weights


def score_reference_band(models: Sequence[TrainedModel], points: Dataset, bins=DEFAULT_BINS):
    """Per-bin mean and standard deviation of score histograms over null-toy models.

    ``bins`` is a bin count on [0, 1] or an explicit edge array. Returns
    ``(edges, mean, std)``.
    """
    if len(models) < 2:
        raise InputError("need at least two models for a band")
    edges = np.linspace(0.0, 1.0, bins + 1) if np.isscalar(bins) else np.asarray(bins, dtype=np.float64)
    hists = np.array([np.histogram(classifier_scores(m, points), bins=edges)[0] for m in models], dtype=np.float64)
    return edges, hists.mean(axis=0), hists.std(axis=0)


@dataclass
class HistogramBundle:
    """Shared-edge 1-D and 2-D histograms for corner plots.

    ``marginals[source][i]`` holds the counts along dimension ``i``;
    ``pairs[source][(i, j)]`` the 2-D counts of dimensions ``i < j``.
    """

    edges: list
    marginals: dict
    pairs: dict
    sources: tuple = ("reference", "data", "selected")
    weighted: tuple = ()
    totals: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return len(self.edges)


def _edges(samples: Sequence[np.ndarray], bins: int) -> list:
    stacked = np.vstack(samples)
    lo, hi = stacked.min(axis=0), stacked.max(axis=0)
    pad = RANGE_PADDING * np.where(hi > lo, hi - lo, 1.0)
    return [np.linspace(lo[i] - pad[i], hi[i] + pad[i], bins + 1) for i in range(stacked.shape[1])]


def corner_data(
    reference: Dataset,
    data: Dataset,
    selected: Dataset,
    bins_per_dim: int = DEFAULT_BINS,
    *,
    reference_weights: Optional[np.ndarray] = None,
) -> HistogramBundle:
    """All marginal and pairwise histograms of the three samples on common edges."""
    if not reference.dim == data.dim == selected.dim:
        raise InputError("all samples must share the same dimension")
    if bins_per_dim < 2:
        raise InputError("need at least two bins per dimension")
    sources = {"reference": reference, "data": data, "selected": selected}
    weights = {"reference": reference_weights}
    if reference_weights is not None and np.shape(reference_weights) != (reference.n_points,):
        raise InputError("need one weight per reference point")
    edges = _edges([s.points for s in sources.values()], bins_per_dim)
    marginals, pairs, totals = {}, {}, {}
    for name, sample in sources.items():
        w = weights.get(name)
        pts = sample.points
        marginals[name] = [np.histogram(pts[:, i], bins=edges[i], weights=w)[0] for i in range(sample.dim)]
        pairs[name] = {
            (i, j): np.histogram2d(pts[:, i], pts[:, j], bins=(edges[i], edges[j]), weights=w)[0]
            for i, j in combinations(range(sample.dim), 2)
        }
        totals[name] = float(np.sum(w)) if w is not None else float(sample.n_points)
    return HistogramBundle(
        edges=edges,
        marginals=marginals,
        pairs=pairs,
        weighted=("reference",) if reference_weights is not None else (),
        totals=totals,
    )
