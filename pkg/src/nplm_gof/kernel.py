"""Gaussian kernel primitives and Nyström center sampling."""

from __future__ import annotations

import numpy as np
from scipy.linalg.blas import dgemm

from .errors import InputError
from .rng import make_rng
from .types import Dataset


def _as_points(x) -> np.ndarray:
    if isinstance(x, Dataset):
        return x.points
    arr = np.asarray(x, dtype=np.float64)
    return arr.reshape(-1, 1) if arr.ndim == 1 else arr


def _scaled_sq_distances(x: np.ndarray, y: np.ndarray, scale: float) -> np.ndarray:
    """``scale * (|x_i|^2 + |y_j|^2 - 2 x_i.y_j)`` as a C-ordered n x m array.

    The norm sum is formed first and the cross term accumulated by a single
    dgemm, which keeps the result exactly symmetric under swapping x and y.
    """
    nx = scale * np.einsum("ij,ij->i", x, x)
    ny = scale * np.einsum("ij,ij->i", y, y)
    acc = np.add.outer(nx, ny)
    out = dgemm(-2.0 * scale, y, x, beta=1.0, c=acc.T, trans_b=True, overwrite_c=True)
    return out.T


def _check_pair(a, b):
    x, y = _as_points(a), _as_points(b)
    if x.shape[1] != y.shape[1]:
        raise InputError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    return np.ascontiguousarray(x), np.ascontiguousarray(y)


def pairwise_sq_distances(a, b) -> np.ndarray:
    """Squared Euclidean distances between the rows of ``a`` and ``b``.

    Uses ``|a|^2 + |b|^2 - 2 a.b`` and clamps tiny negative round-off to zero.
    """
    x, y = _check_pair(a, b)
    out = _scaled_sq_distances(x, y, 1.0)
    np.maximum(out, 0.0, out=out)
    if x is y:
        np.fill_diagonal(out, 0.0)
    return out


def gaussian_kernel(a, b, sigma: float) -> np.ndarray:
    """``exp(-|a_i - b_j|^2 / (2 sigma^2))`` for all pairs of rows."""
    if not sigma > 0:
        raise InputError(f"kernel width must be positive, got {sigma}")
    x, y = _check_pair(a, b)
    k = _scaled_sq_distances(x, y, -0.5 / (sigma * sigma))
    np.minimum(k, 0.0, out=k)
    np.exp(k, out=k)
    if x is y:
        np.fill_diagonal(k, 1.0)
    return k


def sample_center_indices(n: int, m: int, rng: np.random.Generator) -> np.ndarray:
    if m < 1:
        raise InputError(f"number of centers must be positive, got {m}")
    if m > n:
        raise InputError(f"cannot draw {m} centers from {n} points")
    return rng.choice(n, size=m, replace=False)


def sample_centers(pool: Dataset, m: int, seed: int) -> Dataset:
    """Draw ``m`` distinct rows of ``pool`` uniformly without replacement."""
    idx = sample_center_indices(pool.n_points, m, make_rng(seed))
    return pool.take(idx, label=f"{pool.label}:centers", seed=seed)
