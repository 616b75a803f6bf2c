"""Synthetic mixture-of-Gaussians benchmark and resampling utilities."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import logsumexp

from .errors import InputError
from .rng import PERTURB, make_rng
from .types import Dataset


@dataclass(frozen=True, eq=False)
class MoGSpec:
    """Axis-aligned Gaussian mixture: component k has mean ``means[k]`` and
    per-coordinate standard deviations ``stds[k]``."""

    dim: int
    n_components: int
    means: np.ndarray
    stds: np.ndarray
    mixture_probs: np.ndarray
    seed: int = 0

    def __post_init__(self):
        means = np.array(self.means, dtype=np.float64).reshape(self.n_components, self.dim)
        stds = np.array(self.stds, dtype=np.float64).reshape(self.n_components, self.dim)
        probs = np.array(self.mixture_probs, dtype=np.float64).reshape(self.n_components)
        if not np.all(stds > 0):
            raise InputError("component standard deviations must be positive")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise InputError(f"mixture probabilities must lie on the simplex, got {probs}")
        for name, arr in (("means", means), ("stds", stds), ("mixture_probs", probs)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __eq__(self, other):
        if not isinstance(other, MoGSpec):
            return NotImplemented
        return (
            self.dim == other.dim
            and self.n_components == other.n_components
            and self.seed == other.seed
            and np.array_equal(self.means, other.means)
            and np.array_equal(self.stds, other.stds)
            and np.array_equal(self.mixture_probs, other.mixture_probs)
        )

    @property
    def mean(self) -> np.ndarray:
        return self.mixture_probs @ self.means

    @property
    def variance(self) -> np.ndarray:
        second = self.mixture_probs @ (self.stds**2 + self.means**2)
        return second - self.mean**2

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "n_components": self.n_components,
            "means": self.means.tolist(),
            "stds": self.stds.tolist(),
            "mixture_probs": self.mixture_probs.tolist(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MoGSpec":
        return cls(
            dim=int(d["dim"]),
            n_components=int(d["n_components"]),
            means=d["means"],
            stds=d["stds"],
            mixture_probs=d["mixture_probs"],
            seed=int(d.get("seed", 0)),
        )


def random_mog(dim: int, n_components: int, seed: int) -> MoGSpec:
    """Means uniform on [0, 10], stds uniform on (0, 1], uniform weights normalized."""
    if dim < 1 or n_components < 1:
        raise InputError("dim and n_components must be positive")
    rng = make_rng(seed)
    means = rng.uniform(0.0, 10.0, size=(n_components, dim))
    stds = 1.0 - rng.random(size=(n_components, dim))  # (0, 1]
    raw = rng.random(n_components)
    while raw.sum() == 0.0:
        raw = rng.random(n_components)
    return MoGSpec(dim, n_components, means, stds, raw / raw.sum(), seed=seed)


def sample_mog(spec: MoGSpec, n: int, seed: int, label: str = "mog") -> Dataset:
    if n < 1:
        raise InputError(f"sample size must be positive, got {n}")
    rng = make_rng(seed)
    comp = rng.choice(spec.n_components, size=n, p=spec.mixture_probs)
    noise = rng.standard_normal((n, spec.dim))
    return Dataset(spec.means[comp] + spec.stds[comp] * noise, label=label, seed=seed)


def mog_log_density(spec: MoGSpec, x) -> np.ndarray | float:
    """``log sum_k pi_k prod_j N(x_j; mu_kj, s_kj)`` for one point or a batch."""
    pts = np.asarray(x, dtype=np.float64)
    single = pts.ndim == 1
    pts = pts.reshape(-1, spec.dim)
    z = (pts[:, None, :] - spec.means[None]) / spec.stds[None]
    comp = -0.5 * np.sum(z * z, axis=2) - np.sum(np.log(spec.stds), axis=1)[None] - 0.5 * spec.dim * np.log(2 * np.pi)
    with np.errstate(divide="ignore"):
        log_pi = np.log(spec.mixture_probs)
    out = logsumexp(comp + log_pi[None], axis=1)
    return float(out[0]) if single else out


def perturb_mog(
    spec: MoGSpec,
    epsilon: float,
    *,
    seed: Optional[int] = None,
    inflate_only: bool = False,
) -> MoGSpec:
    """Surrogate for an imperfect generator.

    Each component's mean moves by ``epsilon`` along a random unit direction,
    its stds are scaled by ``1 + epsilon*u_k`` (``u_k`` uniform on [-1, 1]) and
    the weights are tilted by ``exp(epsilon*v_k)``. With ``inflate_only`` the
    means and weights are kept and the stds only grow (``u_k`` on [0, 1]).
    """
    if epsilon < 0:
        raise InputError(f"epsilon must be non-negative, got {epsilon}")
    if epsilon == 0:
        return spec
    rng = make_rng(spec.seed if seed is None else seed, PERTURB)
    k, d = spec.n_components, spec.dim
    direction = rng.standard_normal((k, d))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    u = rng.uniform(-1.0, 1.0, size=k)
    v = rng.uniform(-1.0, 1.0, size=k)
    if inflate_only:
        means = spec.means
        stds = spec.stds * (1.0 + epsilon * np.abs(u))[:, None]
        probs = spec.mixture_probs
    else:
        means = spec.means + epsilon * direction
        stds = spec.stds * np.maximum(1.0 + epsilon * u, 0.05)[:, None]
        tilted = spec.mixture_probs * np.exp(epsilon * v)
        probs = tilted / tilted.sum()
    return MoGSpec(d, k, means, stds, probs, seed=spec.seed)


def resample(pool: Dataset, n: int, with_replacement: bool, seed: int) -> Dataset:
    """Uniform draw of ``n`` rows from ``pool``."""
    if n < 1:
        raise InputError(f"sample size must be positive, got {n}")
    if not with_replacement and n > pool.n_points:
        raise InputError(f"cannot draw {n} rows without replacement from {pool.n_points}")
    rng = make_rng(seed)
    if with_replacement:
        idx = rng.integers(0, pool.n_points, size=n)
    else:
        idx = rng.choice(pool.n_points, size=n, replace=False)
    return pool.take(idx, label=f"{pool.label}:resample", seed=seed)
