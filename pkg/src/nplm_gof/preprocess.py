"""Feature standardization driven by the reference sample only."""

from __future__ import annotations

import numpy as np

from .types import Dataset


def reference_scaling(reference: Dataset) -> tuple[np.ndarray, np.ndarray]:
    """Per-coordinate mean and standard deviation of the reference sample.

    Constant coordinates get a unit scale so they pass through unchanged.
    """
    shift = reference.points.mean(axis=0)
    scale = reference.points.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return shift, scale


def apply_scaling(points: np.ndarray, shift: np.ndarray, scale: np.ndarray) -> np.ndarray:
    return (points - shift) / scale


def standardize_pair(reference: Dataset, data: Dataset):
    """Return both samples standardized with reference statistics, plus the transform."""
    shift, scale = reference_scaling(reference)
    return (
        apply_scaling(reference.points, shift, scale),
        apply_scaling(data.points, shift, scale),
        shift,
        scale,
    )
