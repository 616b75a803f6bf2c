"""Regularized weighted logistic regression over a Nyström kernel expansion.

The model is ``f(x) = sum_j w_j k(x, c_j)`` with centers ``c_j`` drawn from the
pooled training sample. The objective is

    risk(w) = (1/N) sum_i loss(y_i, f(x_i)) + lam * w^T K_mm w

with ``loss(0, f) = a * log(1 + e^f)`` for reference points (``a = N_D/N_R``)
and ``loss(1, f) = log(1 + e^-f)`` for data points.

The weights are reparameterized as ``w = B beta`` with ``B = U diag(mu)^-1/2``
from the eigendecomposition of ``K_mm`` (numerically null directions
dropped), so the penalty becomes ``lam |beta|^2`` and the Newton system stays
well conditioned. Newton steps are solved by Cholesky for moderate rank and
by conjugate gradients with a Nyström preconditioner beyond it. The N x N
kernel is never formed.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg
from scipy.special import expit as _sigmoid

from .errors import InputError, NumericalError
from .kernel import gaussian_kernel, sample_center_indices
from .preprocess import apply_scaling, reference_scaling
from .rng import CENTERS, make_rng
from .types import Dataset, NplmConfig, TrainedModel

log = logging.getLogger(__name__)

EXP_CLAMP = 50.0
MAX_HALVINGS = 30
_EVAL_BLOCK = 8192
EIG_RTOL = 1e-12
DIRECT_SOLVE_MAX_RANK = 512


class OverflowClampWarning(RuntimeWarning):
    """exp(f) was evaluated with f clamped at EXP_CLAMP."""


def clamped_exp(f: np.ndarray) -> tuple[np.ndarray, int]:
    """Return ``exp(min(f, EXP_CLAMP))`` and the number of clamped entries."""
    f = np.asarray(f, dtype=np.float64)
    n_clamped = int(np.count_nonzero(f > EXP_CLAMP))
    if n_clamped:
        warnings.warn(
            f"{n_clamped} values of f exceed {EXP_CLAMP} and were clamped before exponentiation",
            OverflowClampWarning,
            stacklevel=2,
        )
    return np.exp(np.minimum(f, EXP_CLAMP)), n_clamped


@dataclass(frozen=True, eq=False)
class LabeledTrainingSet:
    """Pooled training sample, reference rows first (label 0) then data rows (label 1)."""

    points: np.ndarray
    labels: np.ndarray
    ref_weight: float

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 1 or labels.size != np.asarray(self.points).shape[0]:
            raise InputError("labels must be a vector with one entry per point")
        if not np.all((labels == 0) | (labels == 1)):
            raise InputError("labels must be 0 (reference) or 1 (data)")
        if not self.ref_weight > 0:
            raise InputError("ref_weight must be positive")

    @classmethod
    def from_samples(cls, reference, data, ref_weight: Optional[float] = None) -> "LabeledTrainingSet":
        ref = reference.points if isinstance(reference, Dataset) else np.atleast_2d(reference)
        dat = data.points if isinstance(data, Dataset) else np.atleast_2d(data)
        if ref.shape[1] != dat.shape[1]:
            raise InputError(f"dimension mismatch: reference {ref.shape[1]}, data {dat.shape[1]}")
        labels = np.concatenate([np.zeros(len(ref), np.int8), np.ones(len(dat), np.int8)])
        if ref_weight is None:
            ref_weight = len(dat) / len(ref)
        return cls(np.vstack([ref, dat]), labels, float(ref_weight))

    @property
    def n_points(self) -> int:
        return self.labels.size

    @property
    def n_ref(self) -> int:
        return int(np.count_nonzero(self.labels == 0))

    @property
    def n_data(self) -> int:
        return int(np.count_nonzero(self.labels == 1))

    def coefficients(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-point loss weight and sign: loss_i = coef_i * softplus(sign_i * f_i)."""
        is_ref = self.labels == 0
        coef = np.where(is_ref, self.ref_weight, 1.0)
        sign = np.where(is_ref, 1.0, -1.0)
        return coef, sign


def _per_point_loss(f, coef, sign):
    return coef * np.logaddexp(0.0, sign * f)


def _risk(f, w, k_mm, coef, sign, lam):
    return float(np.mean(_per_point_loss(f, coef, sign)) + lam * (w @ (k_mm @ w)))


def _gradient(f, w, k_nm, k_mm, coef, sign, lam):
    r = coef * sign * _sigmoid(sign * f)
    return (k_nm.T @ r) / f.size + 2.0 * lam * (k_mm @ w)


def risk_gradient(weights, train: LabeledTrainingSet, kernel_blocks, lam: float) -> np.ndarray:
    """Gradient of the regularized risk with respect to the weights.

    ``kernel_blocks`` is the pair ``(K_nm, K_mm)`` of training-vs-center and
    center-vs-center kernel matrices.
    """
    k_nm, k_mm = kernel_blocks
    w = np.asarray(weights, dtype=np.float64)
    if k_nm.shape != (train.n_points, w.size) or k_mm.shape != (w.size, w.size):
        raise InputError("kernel blocks do not match the training set and weights")
    coef, sign = train.coefficients()
    return _gradient(k_nm @ w, w, k_nm, k_mm, coef, sign, lam)


def evaluate_f(model: TrainedModel, points) -> np.ndarray:
    """Evaluate ``f(x) = sum_j w_j k(x, c_j)`` at raw-coordinate points."""
    x = points.points if isinstance(points, Dataset) else np.asarray(points, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if x.shape[1] != model.dim:
        raise InputError(f"dimension mismatch: points have {x.shape[1]}, model has {model.dim}")
    x = model.transform(x)
    out = np.empty(x.shape[0])
    for start in range(0, x.shape[0], _EVAL_BLOCK):
        block = x[start : start + _EVAL_BLOCK]
        out[start : start + block.shape[0]] = gaussian_kernel(block, model.centers, model.kernel_width) @ model.weights
    return out


def empirical_risk(model: TrainedModel, train: LabeledTrainingSet, lam: float) -> float:
    """Regularized weighted logistic risk of ``model`` on ``train``."""
    coef, sign = train.coefficients()
    f = evaluate_f(model, train.points)
    k_mm = gaussian_kernel(model.centers, model.centers, model.kernel_width)
    return _risk(f, model.weights, k_mm, coef, sign, lam)


def _whitening_basis(k_mm: np.ndarray) -> np.ndarray:
    """Columns ``u_i / sqrt(mu_i)`` for the numerically significant eigenpairs of K_mm.

    With ``w = B beta`` the regularizer ``w^T K_mm w`` becomes ``|beta|^2``.
    Eigenvalues below ``EIG_RTOL * mu_max`` are dropped: they are below the
    round-off floor of K_mm and carry no resolvable function.
    """
    mu, u = scipy.linalg.eigh(k_mm)
    keep = mu > EIG_RTOL * mu[-1]
    if not keep.any():
        raise NumericalError("center kernel matrix has no positive eigenvalues")
    return u[:, keep] / np.sqrt(mu[keep])


class _Preconditioner:
    """Nyström approximation of the Newton matrix in whitened coordinates.

    The data term ``(1/N) Phi^T D Phi`` is approximated from the center rows
    only, ``(1/M) Phi_c^T D_c Phi_c``; the ridge ``2 lam`` is added and the
    r x r result is Cholesky-factored (with jitter if needed).
    """

    def __init__(self, phi_centers: np.ndarray):
        self.phi_c = phi_centers
        self.factor = None

    def update(self, h_centers: np.ndarray, lam: float) -> None:
        m, r = self.phi_c.shape
        g = self.phi_c * np.sqrt(h_centers)[:, None]
        inner = g.T @ g / m
        inner[np.diag_indices(r)] += 2.0 * lam
        self.factor = _cholesky_with_jitter(inner)

    def solve(self, v: np.ndarray) -> np.ndarray:
        return scipy.linalg.cho_solve(self.factor, v)


def _cholesky_with_jitter(a: np.ndarray):
    jitter = 0.0
    scale = max(float(np.trace(a)) / a.shape[0], np.finfo(float).tiny)
    for _ in range(20):
        try:
            return scipy.linalg.cho_factor(a + jitter * np.eye(a.shape[0]), lower=False)
        except np.linalg.LinAlgError:
            jitter = 1e-12 * scale if jitter == 0.0 else jitter * 10.0
    raise NumericalError("Newton matrix could not be factorized")


def _pcg(matvec, b, precond, rtol: float, max_iter: int) -> tuple[np.ndarray, int]:
    x = np.zeros_like(b)
    r = b.copy()
    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        return x, 0
    z = precond(r)
    p = z.copy()
    rz = r @ z
    for it in range(1, max_iter + 1):
        ap = matvec(p)
        pap = p @ ap
        if not pap > 0:
            # curvature lost to round-off: keep the current iterate
            return x, it
        step = rz / pap
        x += step * p
        r -= step * ap
        if np.linalg.norm(r) <= rtol * b_norm:
            return x, it
        z = precond(r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, max_iter


def _newton(phi, center_idx, coef, sign, config: NplmConfig):
    """Minimize ``mean(coef * softplus(sign * phi beta)) + lam |beta|^2``.

    Returns (beta, f, converged, iterations, risk history, relative gradient norm).
    """
    n, r = phi.shape
    lam = config.regularization

    def risk_of(f, beta):
        return float(np.mean(coef * np.logaddexp(0.0, sign * f)) + lam * (beta @ beta))

    def grad_of(f, beta):
        return phi.T @ (coef * sign * _sigmoid(sign * f)) / n + 2.0 * lam * beta

    beta = np.zeros(r)
    f = np.zeros(n)
    risk = risk_of(f, beta)
    g = grad_of(f, beta)
    g0 = np.linalg.norm(g)
    history = [risk]
    if not np.isfinite(risk) or not np.isfinite(g0):
        raise NumericalError(f"non-finite loss at iteration 0 (gradient norm {g0})")
    if g0 == 0.0:
        return beta, f, True, 0, history, 0.0

    direct = r <= DIRECT_SOLVE_MAX_RANK
    precond = None if direct else _Preconditioner(phi[center_idx])
    rel = 1.0
    for it in range(1, config.newton_max_iter + 1):
        s = _sigmoid(f)
        h = coef * s * (1.0 - s)
        if direct:
            gh = phi * np.sqrt(h)[:, None]
            hess = gh.T @ gh / n
            hess[np.diag_indices(r)] += 2.0 * lam
            p = scipy.linalg.cho_solve(_cholesky_with_jitter(hess), -g)
        else:
            precond.update(h[center_idx], lam)

            def hess_vec(v, h=h):
                return phi.T @ (h * (phi @ v)) / n + 2.0 * lam * v

            p, _ = _pcg(hess_vec, -g, precond.solve, min(0.5, np.sqrt(rel)), config.cg_max_iter)
        if not np.all(np.isfinite(p)):
            raise NumericalError(
                f"non-finite Newton step at iteration {it} (gradient norm {np.linalg.norm(g):.3e})"
            )
        phi_p = phi @ p
        slope = float(g @ p)
        step = 1.0
        for _ in range(MAX_HALVINGS + 1):
            f_try = f + step * phi_p
            beta_try = beta + step * p
            risk_try = risk_of(f_try, beta_try)
            if np.isfinite(risk_try) and risk_try < risk:
                break
            step *= 0.5
        else:
            # no representable decrease left: stationary to working precision
            stationary = -slope <= 64 * np.finfo(float).eps * max(abs(risk), 1.0)
            return beta, f, stationary or rel <= config.newton_tol, it, history, rel
        beta, f, risk = beta_try, f_try, risk_try
        history.append(risk)
        g = grad_of(f, beta)
        g_norm = np.linalg.norm(g)
        if not np.isfinite(g_norm):
            raise NumericalError(f"non-finite loss at iteration {it} (gradient norm {g_norm})")
        rel = g_norm / g0
        if rel <= config.newton_tol:
            return beta, f, True, it, history, rel
    log.debug("Newton stopped at max_iter with relative gradient %.3e", rel)
    return beta, f, False, config.newton_max_iter, history, rel


def fit(reference: Dataset, data: Dataset, config: NplmConfig) -> TrainedModel:
    """Learn the log density ratio of ``data`` over ``reference``.

    Raises NumericalError if the loss or the Newton step becomes non-finite,
    which usually means the regularization is too small.
    """
    return fit_in_sample(reference, data, config)[0]


def fit_in_sample(reference: Dataset, data: Dataset, config: NplmConfig) -> tuple[TrainedModel, np.ndarray]:
    """Like :func:`fit`, also returning f on the training points (reference rows first)."""
    if reference.dim != data.dim:
        raise InputError(f"dimension mismatch: reference {reference.dim}, data {data.dim}")
    n_ref, n_data = reference.n_points, data.n_points
    n = n_ref + n_data
    if config.n_centers > n:
        raise InputError(f"n_centers={config.n_centers} exceeds the {n} training points")
    expected = float(n_data)
    if config.expected_count is not None and config.expected_count != expected:
        log.warning("expected_count=%s ignored; using the data size %d", config.expected_count, n_data)

    if config.standardize:
        shift, scale = reference_scaling(reference)
        ref_pts = apply_scaling(reference.points, shift, scale)
        dat_pts = apply_scaling(data.points, shift, scale)
    else:
        shift = scale = None
        ref_pts, dat_pts = reference.points, data.points
    train = LabeledTrainingSet.from_samples(ref_pts, dat_pts, expected / n_ref)
    coef, sign = train.coefficients()

    center_idx = sample_center_indices(n, config.n_centers, make_rng(config.master_seed, CENTERS))
    centers = train.points[center_idx]
    k_nm = gaussian_kernel(train.points, centers, config.kernel_width)
    k_mm = k_nm[center_idx]
    k_mm = 0.5 * (k_mm + k_mm.T)
    np.fill_diagonal(k_mm, 1.0)

    basis = _whitening_basis(k_mm)
    phi = k_nm @ basis
    beta, f_train, converged, iters, history, rel = _newton(phi, center_idx, coef, sign, config)
    w = basis @ beta
    model = TrainedModel(
        centers=centers,
        weights=w,
        kernel_width=config.kernel_width,
        ref_count=n_ref,
        data_count=n_data,
        expected_count=expected,
        converged=bool(converged),
        iterations_used=int(iters),
        shift=shift,
        scale=scale,
        center_indices=center_idx,
        risk_history=history,
        grad_norm=float(rel),
    )
    return model, phi @ beta
