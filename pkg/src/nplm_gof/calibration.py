"""Null-distribution calibration with pseudo-experiments and the chi2 fit."""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import math
import multiprocessing
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from functools import partial
from pathlib import Path
from typing import Callable, Iterable, Optional

import numpy as np
from scipy import optimize, special, stats

from . import __version__
from .errors import CalibrationError, FingerprintMismatch, InputError, NumericalError
from .rng import PARTITION, REPEAT, TOY, TOY_DRAW, TOY_FIT, derive_seed, make_rng
from .testing import make_report, run_single_test
from .types import Dataset, Direction, NplmConfig, NullModel, ValidationSummary

log = logging.getLogger(__name__)

MIN_TOYS = 20
MAX_FAILED_FRACTION = 0.10
UNBALANCED_RATIO = 5


class ResamplingMode(str, enum.Enum):
    PARTITION = "partition"
    BOOTSTRAP = "bootstrap"


@dataclass(frozen=True)
class ResamplingPolicy:
    """How toy (or repeat) data samples are drawn from a pool.

    Partition draws are disjoint slices of one permutation of the pool when
    the pool is large enough, otherwise independent draws without replacement
    (flagged as overlapping). Bootstrap draws sample with replacement.
    """

    mode: ResamplingMode
    toy_size: int

    def __post_init__(self):
        object.__setattr__(self, "mode", ResamplingMode(self.mode))
        if int(self.toy_size) < 1:
            raise InputError(f"toy_size must be positive, got {self.toy_size}")
        object.__setattr__(self, "toy_size", int(self.toy_size))


# ---------------------------------------------------------------- fingerprint


def fingerprint_fields(config: NplmConfig, reference: Dataset, toy_size: int) -> dict:
    """Everything a null distribution depends on, except the seed."""
    return {
        "n_centers": config.n_centers,
        "kernel_width": repr(config.kernel_width),
        "regularization": repr(config.regularization),
        "newton_tol": repr(config.newton_tol),
        "newton_max_iter": config.newton_max_iter,
        "cg_max_iter": config.cg_max_iter,
        "standardize": config.standardize,
        "ref_count": reference.n_points,
        "toy_size": int(toy_size),
        "reference": reference.fingerprint,
        "version": __version__,
    }


def config_fingerprint(config: NplmConfig, reference: Dataset, toy_size: int) -> tuple[str, dict]:
    fields = fingerprint_fields(config, reference, toy_size)
    digest = hashlib.sha256(json.dumps(fields, sort_keys=True).encode()).hexdigest()
    return digest, fields


# ------------------------------------------------------------------ chi2 fit


def fit_chi2_dof(t_values) -> float:
    """Maximum-likelihood chi2 degrees of freedom for the positive values.

    The score equation ``digamma(k/2) = mean(log(t/2))`` is solved by bracketed
    root finding. Samples without spread, or a failed bracket, fall back to
    the mean of all values (``E[chi2_k] = k``).
    """
    t = np.asarray(t_values, dtype=np.float64)
    if t.size < MIN_TOYS or not np.all(np.isfinite(t)):
        raise InputError(f"need at least {MIN_TOYS} finite values, got {t.size}")
    pos = t[t > 0]
    if pos.size == 0:
        raise InputError("all test-statistic values are non-positive")
    fallback = float(np.mean(t))
    if pos.size < 2 or np.ptp(pos) == 0.0:
        return fallback if fallback > 0 else float(np.mean(pos))
    target = float(np.mean(np.log(0.5 * pos)))

    def score(k):
        return special.digamma(0.5 * k) - target

    lo, hi = 1e-3, 10.0
    while score(hi) < 0 and hi < 1e8:
        hi *= 10.0
    try:
        if score(lo) > 0 or score(hi) < 0:
            raise ValueError("root not bracketed")
        return float(optimize.brentq(score, lo, hi, xtol=1e-12, rtol=1e-12))
    except ValueError:
        log.warning("chi2 MLE did not bracket; using the sample mean %.4g", fallback)
        return fallback if fallback > 0 else float(np.mean(pos))


def ks_compatibility(t_values, dof: float) -> float:
    """Asymptotic one-sample KS p-value of ``t_values`` against chi2(dof)."""
    t = np.sort(np.asarray(t_values, dtype=np.float64))
    n = t.size
    if n < MIN_TOYS:
        raise InputError(f"need at least {MIN_TOYS} values, got {n}")
    cdf = stats.chi2.cdf(t, dof)
    i = np.arange(1, n + 1)
    d_stat = max(np.max(i / n - cdf), np.max(cdf - (i - 1) / n))
    return float(special.kolmogorov(math.sqrt(n) * d_stat))


# ---------------------------------------------------------------- resampling


def _partition_order(pool: Dataset, master_seed: int) -> np.ndarray:
    return make_rng(master_seed, PARTITION).permutation(pool.n_points)


def draw_toys(
    pool: Dataset,
    policy: ResamplingPolicy,
    master_seed: int,
    indices: Iterable[int],
    n_total: int,
    stream: int = TOY,
) -> tuple[list[Dataset], bool]:
    """Draw the samples for the given toy indices; returns (samples, overlapping)."""
    size = policy.toy_size
    overlapping = False
    order = None
    if policy.mode is ResamplingMode.PARTITION:
        if size > pool.n_points:
            raise InputError(f"pool of {pool.n_points} points cannot supply toys of {size}")
        if pool.n_points >= n_total * size:
            order = _partition_order(pool, derive_seed(master_seed, stream))
        else:
            overlapping = n_total > 1
    out = []
    for i in indices:
        seed = derive_seed(master_seed, stream, i)
        if order is not None:
            idx = order[i * size : (i + 1) * size]
        else:
            rng = make_rng(seed, TOY_DRAW)
            if policy.mode is ResamplingMode.BOOTSTRAP:
                idx = rng.integers(0, pool.n_points, size=size)
            else:
                idx = rng.choice(pool.n_points, size=size, replace=False)
        out.append(pool.take(idx, label=f"{pool.label}:{stream}:{i}", seed=seed))
    return out, overlapping


# ------------------------------------------------------------------- workers


def parallel_map(fn: Callable, items: list, workers: int = 1) -> list:
    """Ordered map, optionally over a process pool; results never depend on ``workers``."""
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    ctx = multiprocessing.get_context("fork")
    chunk = max(1, len(items) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as ex:
        return list(ex.map(fn, items, chunksize=chunk))


@dataclass(frozen=True)
class ToyOutcome:
    index: int
    seed: int
    t: float
    converged: bool
    error: Optional[str]
    seconds: float


def _run_toy(task, reference: Dataset, config: NplmConfig) -> ToyOutcome:
    index, data = task
    fit_config = replace(config, master_seed=derive_seed(data.seed, TOY_FIT))
    start = time.perf_counter()
    try:
        model, t = run_single_test(reference, data, fit_config)
    except NumericalError as exc:
        return ToyOutcome(index, data.seed, float("nan"), False, str(exc), time.perf_counter() - start)
    ok = model.converged and np.isfinite(t)
    return ToyOutcome(index, data.seed, t, bool(ok), None, time.perf_counter() - start)


def run_toys(
    reference: Dataset,
    toy_pool: Dataset,
    config: NplmConfig,
    policy: ResamplingPolicy,
    n_toys: int,
    workers: int = 1,
    stream: int = TOY,
) -> tuple[list[ToyOutcome], bool]:
    toys, overlapping = draw_toys(toy_pool, policy, config.master_seed, range(n_toys), n_toys, stream)
    outcomes = parallel_map(
        partial(_run_toy, reference=reference, config=config), list(enumerate(toys)), workers
    )
    return sorted(outcomes, key=lambda o: o.index), overlapping


# ---------------------------------------------------------------- calibrate


def calibrate_null(
    reference: Dataset,
    toy_pool: Dataset,
    config: NplmConfig,
    policy: ResamplingPolicy,
    n_toys: int,
    workers: int = 1,
) -> NullModel:
    """Estimate the null distribution by testing reference-distributed toys
    against ``reference`` and fit a chi2 to it.

    Failed toys (non-finite output or no convergence) are dropped, not
    retried; more than 10% failures raises CalibrationError.
    """
    if n_toys < MIN_TOYS:
        raise InputError(f"need at least {MIN_TOYS} toys, got {n_toys}")
    notes = []
    if reference.n_points < UNBALANCED_RATIO * policy.toy_size:
        msg = (
            f"reference size {reference.n_points} is below {UNBALANCED_RATIO}x the toy size "
            f"{policy.toy_size}; reference fluctuations may not be subdominant"
        )
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
    if toy_pool.fingerprint == reference.fingerprint:
        notes.append("toy pool is the reference sample itself; toys overlap the reference")
    outcomes, overlapping = run_toys(reference, toy_pool, config, policy, n_toys, workers)
    if overlapping:
        notes.append("pool too small for disjoint toys; partition draws overlap")
    good = [o for o in outcomes if o.converged]
    n_failed = len(outcomes) - len(good)
    if n_failed:
        msg = f"{n_failed} of {n_toys} toys failed and were excluded"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
    if n_failed > MAX_FAILED_FRACTION * n_toys:
        first = next((o.error for o in outcomes if o.error), "no convergence")
        raise CalibrationError(
            f"{n_failed}/{n_toys} toys failed (first error: {first}); "
            "the regularization is probably too small"
        )
    values = np.array([o.t for o in good])
    dof = fit_chi2_dof(values)
    digest, fields = config_fingerprint(config, reference, policy.toy_size)
    return NullModel(
        toy_values=values,
        chi2_dof=dof,
        ks_pvalue=ks_compatibility(values, dof),
        n_toys=values.size,
        config_fingerprint=digest,
        fingerprint_fields=fields,
        n_failed=n_failed,
        master_seed=config.master_seed,
        warnings=tuple(notes),
    )


def check_fingerprint(null: NullModel, config: NplmConfig, reference: Dataset, toy_size: int) -> None:
    digest, fields = config_fingerprint(config, reference, toy_size)
    if digest != null.config_fingerprint:
        raise FingerprintMismatch(fields, dict(null.fingerprint_fields))


def cached_null(
    cache_dir,
    reference: Dataset,
    toy_pool: Dataset,
    config: NplmConfig,
    policy: ResamplingPolicy,
    n_toys: int,
    workers: int = 1,
) -> NullModel:
    """Load the null for this configuration from ``cache_dir`` or calibrate and store it."""
    from .io import read_report, write_report

    digest, _ = config_fingerprint(config, reference, policy.toy_size)
    path = Path(cache_dir) / f"null-{digest[:16]}-s{config.master_seed}-n{n_toys}.json"
    if path.exists():
        null = read_report(path)
        if null.config_fingerprint == digest:
            return null
    null = calibrate_null(reference, toy_pool, config, policy, n_toys, workers)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_report(null, path)
    return null


# ----------------------------------------------------------------- validate


def summarize(reports, direction: Direction = Direction.TRUE_AS_REFERENCE) -> ValidationSummary:
    z = np.array([r.z_score for r in reports])
    return ValidationSummary(
        z_median=float(np.median(z)),
        ci68_low=float(np.percentile(z, 16)),
        ci68_high=float(np.percentile(z, 84)),
        per_repeat_reports=tuple(reports),
        n_repeats=len(reports),
        direction=Direction(direction),
    )


def run_validation(
    reference: Dataset,
    data_pool: Dataset,
    config: NplmConfig,
    null: NullModel,
    n_repeats: int,
    policy: ResamplingPolicy,
    direction: Direction = Direction.TRUE_AS_REFERENCE,
    workers: int = 1,
    alpha: Optional[float] = None,
) -> ValidationSummary:
    """Repeat the test on ``n_repeats`` samples drawn from ``data_pool`` and
    summarize the chi2-route Z-scores by their median and 16/84 percentiles."""
    if n_repeats < 1:
        raise InputError("n_repeats must be positive")
    check_fingerprint(null, config, reference, policy.toy_size)
    outcomes, _ = run_toys(reference, data_pool, config, policy, n_repeats, workers, stream=REPEAT)
    reports = []
    for o in outcomes:
        if not np.isfinite(o.t):
            raise NumericalError(f"repeat {o.index} failed: {o.error}")
        reports.append(
            make_report(o.t, null, direction=direction, seeds=(config.master_seed, o.seed), alpha=alpha, converged=o.converged)
        )
    return summarize(reports, direction)
