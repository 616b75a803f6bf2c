"""Extended-likelihood-ratio test statistic, p-values and Z-scores."""

from __future__ import annotations

import warnings
from typing import Optional, Sequence

import numpy as np
from scipy import special, stats

from .errors import InputError
from .solver import clamped_exp, evaluate_f, fit_in_sample
from .types import Dataset, Direction, NplmConfig, NullModel, TestReport, TrainedModel


def statistic_from_f(f_ref: np.ndarray, f_data: np.ndarray, ref_weight: float) -> float:
    """``-2 [ ref_weight * sum_R (e^f - 1) - sum_D f ]``."""
    e, _ = clamped_exp(f_ref)
    t = -2.0 * (ref_weight * np.sum(e - 1.0) - np.sum(f_data))
    return float(t)


def test_statistic(model: TrainedModel, reference: Dataset, data: Dataset) -> float:
    """Evaluate the test statistic of a fitted model on its training samples."""
    if reference.n_points != model.ref_count or data.n_points != model.data_count:
        raise InputError("model was not trained on samples of these sizes")
    return statistic_from_f(evaluate_f(model, reference), evaluate_f(model, data), model.ref_weight)


test_statistic.__test__ = False  # keep pytest from collecting it


# allowed factor between the reweighted reference mass and the data count
MASS_BALANCE_FACTOR = 2.0


class MassBalanceWarning(RuntimeWarning):
    """The reweighted reference mass is far from the data count."""


def mass_ratio(f_ref, n_data: int, ref_weight: float) -> float:
    """``ref_weight * sum(exp f) / n_data`` over the reference points; close to 1 for a balanced fit."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        expf, _ = clamped_exp(np.asarray(f_ref, dtype=np.float64))
    return float(ref_weight * expf.sum() / n_data)


def run_single_test(reference: Dataset, data: Dataset, config: NplmConfig) -> tuple[TrainedModel, float]:
    """Fit on (reference, data) and evaluate the statistic in-sample.

    Warns with :class:`MassBalanceWarning` when the fit overshoots on reference
    points near a region the reference barely populates. The logistic fit
    then no longer balances mass, and ``t`` can turn large and negative even
    for a strong discrepancy. A larger regularization restores the balance.
    """
    model, f = fit_in_sample(reference, data, config)
    f_ref = f[: reference.n_points]
    t = statistic_from_f(f_ref, f[reference.n_points :], model.ref_weight)
    ratio = mass_ratio(f_ref, data.n_points, model.ref_weight)
    if not 1.0 / MASS_BALANCE_FACTOR <= ratio <= MASS_BALANCE_FACTOR:
        warnings.warn(
            f"reweighted reference mass is {ratio:.3g} x the data count (t={t:.4g}); "
            f"the statistic is unreliable, consider a larger regularization than {config.regularization:g}",
            MassBalanceWarning,
            stacklevel=2,
        )
    return model, t


run_single_test.__test__ = False


def empirical_p_value(t_obs: float, toys: Sequence[float]) -> float:
    """``(#{t_i >= t_obs} + 1) / (N_toys + 1)``."""
    toys = np.sort(np.asarray(toys, dtype=np.float64))
    if toys.size == 0:
        raise InputError("need at least one toy value")
    n_ge = toys.size - np.searchsorted(toys, t_obs, side="left")
    return float((n_ge + 1) / (toys.size + 1))


def chi2_p_value(t_obs: float, dof: float) -> float:
    """Upper-tail probability of chi2(dof) at ``t_obs``; 1 for ``t_obs <= 0``."""
    if not dof > 0:
        raise InputError(f"degrees of freedom must be positive, got {dof}")
    if t_obs <= 0:
        return 1.0
    return float(special.gammaincc(0.5 * dof, 0.5 * t_obs))


def _chi2_log_sf(t_obs: float, dof: float) -> float:
    logp = float(stats.chi2.logsf(t_obs, dof))
    if np.isfinite(logp):
        return logp
    # far tail: log Q(a, x) ~ (a-1) log x - x - lgamma(a) + log1p((a-1)/x)
    a, x = 0.5 * dof, 0.5 * t_obs
    return (a - 1.0) * np.log(x) - x - special.gammaln(a) + np.log1p(max((a - 1.0) / x, -0.5))


def _chi2_log_cdf(t_obs: float, dof: float) -> float:
    logp = float(stats.chi2.logcdf(t_obs, dof))
    if np.isfinite(logp):
        return logp
    # near zero: log P(a, x) ~ a log x - x - lgamma(a + 1)
    a, x = 0.5 * dof, 0.5 * t_obs
    return a * np.log(x) - x - special.gammaln(a + 1.0)


# Z for t <= 0 (p = 1) would be -inf; a finite floor keeps medians and
# percentile bands of Z well defined
Z_FLOOR = -40.0
_LOG_HALF = float(np.log(0.5))


def z_score(p: float) -> float:
    """``Phi^{-1}(1 - p)``; non-positive for ``p >= 0.5``."""
    if not (0.0 < p <= 1.0):
        raise InputError(f"p-value must lie in (0, 1], got {p}")
    return float(stats.norm.isf(p))


def chi2_z_score(t_obs: float, dof: float) -> float:
    """Z-score of ``t_obs`` under chi2(dof).

    Computed through the log of whichever tail is smaller, so it stays finite
    and strictly increasing in ``t_obs`` where the p-value itself rounds to 0
    or 1. Values below ``Z_FLOOR`` (including every ``t_obs <= 0``) are
    clamped to it.
    """
    if t_obs <= 0:
        return Z_FLOOR
    log_sf = _chi2_log_sf(t_obs, dof)
    if log_sf < _LOG_HALF:
        z = -special.ndtri_exp(log_sf)
    else:
        z = special.ndtri_exp(_chi2_log_cdf(t_obs, dof))
    return float(max(z, Z_FLOOR))


def make_report(
    t_obs: float,
    null: NullModel,
    *,
    direction: Direction = Direction.TRUE_AS_REFERENCE,
    seeds: Sequence[int] = (),
    alpha: Optional[float] = None,
    converged: bool = True,
) -> TestReport:
    """Convert an observed statistic into both p-value routes and Z-scores.

    The headline ``z_score`` uses the fitted chi2; the empirical Z saturates
    at ``Phi^{-1}(1 - 1/(N_toys+1))`` and is flagged as a lower bound there.
    The decision rejects when ``t_obs`` reaches the chi2 critical value.
    """
    if alpha is not None and not 0.0 < alpha < 1.0:
        raise InputError(f"alpha must lie in (0, 1), got {alpha}")
    p_emp = empirical_p_value(t_obs, null.toy_values)
    p_chi2 = chi2_p_value(t_obs, null.chi2_dof)
    decision = None
    if alpha is not None:
        decision = bool(t_obs >= stats.chi2.isf(alpha, null.chi2_dof))
    return TestReport(
        t_obs=float(t_obs),
        p_empirical=p_emp,
        p_chi2=p_chi2,
        z_score=chi2_z_score(t_obs, null.chi2_dof),
        z_empirical=z_score(p_emp),
        z_empirical_is_bound=bool(p_emp <= 1.0 / (null.n_toys + 1)),
        direction=Direction(direction),
        seeds=tuple(int(s) for s in seeds),
        alpha=alpha,
        decision=decision,
        converged=bool(converged),
    )
