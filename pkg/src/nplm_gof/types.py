"""Shared data model: samples, configuration, fitted models and reports."""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InputError


def _frozen_array(values, *, ndim: int, name: str) -> np.ndarray:
    arr = np.array(values, dtype=np.float64, order="C", copy=True)
    if arr.ndim != ndim:
        raise InputError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


class Direction(str, enum.Enum):
    """Which sample plays the reference role."""

    TRUE_AS_REFERENCE = "true-as-ref"
    GENERATOR_AS_REFERENCE = "gen-as-ref"


@dataclass(frozen=True, eq=False)
class Dataset:
    """An in-memory sample of ``n_points`` points in ``dim`` dimensions.

    ``points`` is copied to a read-only float64 array on construction.
    """

    points: np.ndarray
    label: str = ""
    seed: Optional[int] = None

    def __post_init__(self):
        pts = np.array(self.points, dtype=np.float64, order="C", copy=True)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if pts.ndim != 2:
            raise InputError(f"points must be a 2-D array, got shape {pts.shape}")
        if pts.shape[0] < 1 or pts.shape[1] < 1:
            raise InputError(f"dataset must contain at least one point, got shape {pts.shape}")
        bad = ~np.isfinite(pts)
        if bad.any():
            row, col = np.argwhere(bad)[0]
            raise InputError(f"non-finite coordinate at row {row}, column {col}")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if self.seed is not None:
            object.__setattr__(self, "seed", int(self.seed) & ((1 << 64) - 1))

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.n_points

    @property
    def fingerprint(self) -> str:
        """SHA-256 over shape and raw little-endian bytes of the points."""
        h = hashlib.sha256()
        h.update(np.array(self.points.shape, dtype="<u8").tobytes())
        h.update(self.points.astype("<f8", copy=False).tobytes())
        return h.hexdigest()

    def take(self, indices, label: Optional[str] = None, seed: Optional[int] = None) -> "Dataset":
        return Dataset(self.points[np.asarray(indices)], label=label or self.label, seed=seed)


@dataclass(frozen=True)
class NplmConfig:
    """Hyperparameters and solver settings of one NPLM test.

    ``expected_count`` is kept for forward compatibility only: the fit always
    uses the size of the data sample as the expected count.
    """

    n_centers: int
    kernel_width: float
    regularization: float
    expected_count: Optional[float] = None
    newton_tol: float = 1e-6
    newton_max_iter: int = 50
    cg_max_iter: int = 500
    master_seed: int = 0
    standardize: bool = True

    def __post_init__(self):
        if int(self.n_centers) < 1:
            raise InputError(f"n_centers must be positive, got {self.n_centers}")
        if not self.kernel_width > 0 or not np.isfinite(self.kernel_width):
            raise InputError(f"kernel_width must be positive, got {self.kernel_width}")
        if not self.regularization > 0 or not np.isfinite(self.regularization):
            raise InputError(f"regularization must be positive, got {self.regularization}")
        if self.expected_count is not None and not self.expected_count > 0:
            raise InputError(f"expected_count must be positive, got {self.expected_count}")
        if not self.newton_tol > 0:
            raise InputError("newton_tol must be positive")
        if int(self.newton_max_iter) < 1 or int(self.cg_max_iter) < 1:
            raise InputError("iteration budgets must be positive")
        object.__setattr__(self, "n_centers", int(self.n_centers))
        object.__setattr__(self, "kernel_width", float(self.kernel_width))
        object.__setattr__(self, "regularization", float(self.regularization))
        object.__setattr__(self, "master_seed", int(self.master_seed) & ((1 << 64) - 1))


@dataclass(frozen=True, eq=False)
class TrainedModel:
    """Nyström expansion ``f(x) = sum_i w_i k(x, c_i)``.

    Centers live in the (optionally standardized) training coordinates;
    ``shift``/``scale`` map raw inputs into that space before evaluation.
    """

    centers: np.ndarray
    weights: np.ndarray
    kernel_width: float
    ref_count: int
    data_count: int
    expected_count: float
    converged: bool
    iterations_used: int
    shift: Optional[np.ndarray] = None
    scale: Optional[np.ndarray] = None
    center_indices: Optional[np.ndarray] = None
    risk_history: tuple = ()
    grad_norm: float = float("nan")

    def __post_init__(self):
        centers = _frozen_array(self.centers, ndim=2, name="centers")
        weights = _frozen_array(self.weights, ndim=1, name="weights")
        if centers.shape[0] != weights.shape[0]:
            raise InputError("centers and weights disagree on M")
        if not np.all(np.isfinite(weights)):
            raise InputError("model weights must be finite")
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "weights", weights)
        for name in ("shift", "scale"):
            val = getattr(self, name)
            if val is not None:
                object.__setattr__(self, name, _frozen_array(val, ndim=1, name=name))
        if self.center_indices is not None:
            idx = np.array(self.center_indices, dtype=np.int64)
            idx.setflags(write=False)
            object.__setattr__(self, "center_indices", idx)
        object.__setattr__(self, "risk_history", tuple(float(r) for r in self.risk_history))

    @property
    def n_centers(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    @property
    def ref_weight(self) -> float:
        return self.expected_count / self.ref_count

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Map raw coordinates into the space the centers live in."""
        x = np.asarray(points, dtype=np.float64)
        if self.shift is not None:
            x = x - self.shift
        if self.scale is not None:
            x = x / self.scale
        return x


@dataclass(frozen=True, eq=False)
class NullModel:
    toy_values: np.ndarray
    chi2_dof: float
    ks_pvalue: float
    n_toys: int
    config_fingerprint: str
    fingerprint_fields: dict = field(default_factory=dict)
    n_failed: int = 0
    master_seed: int = 0
    warnings: tuple = ()

    def __post_init__(self):
        vals = np.sort(np.array(self.toy_values, dtype=np.float64))
        if vals.ndim != 1 or vals.size != self.n_toys:
            raise InputError(f"expected {self.n_toys} toy values, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise InputError("toy values must be finite")
        if not self.chi2_dof > 0:
            raise InputError(f"chi2_dof must be positive, got {self.chi2_dof}")
        vals.setflags(write=False)
        object.__setattr__(self, "toy_values", vals)
        object.__setattr__(self, "warnings", tuple(self.warnings))


@dataclass(frozen=True)
class TestReport:
    t_obs: float
    p_empirical: float
    p_chi2: float
    z_score: float
    z_empirical: float
    z_empirical_is_bound: bool
    direction: Direction = Direction.TRUE_AS_REFERENCE
    seeds: tuple = ()
    alpha: Optional[float] = None
    decision: Optional[bool] = None
    converged: bool = True

    __test__ = False  # not a pytest test class


@dataclass(frozen=True)
class ValidationSummary:
    z_median: float
    ci68_low: float
    ci68_high: float
    per_repeat_reports: tuple
    n_repeats: int
    direction: Direction = Direction.TRUE_AS_REFERENCE

    def __post_init__(self):
        if self.n_repeats != len(self.per_repeat_reports):
            raise InputError("n_repeats disagrees with the number of reports")
        object.__setattr__(self, "per_repeat_reports", tuple(self.per_repeat_reports))

    @property
    def z_values(self) -> np.ndarray:
        return np.array([r.z_score for r in self.per_repeat_reports])
