"""Input validation helpers for array-facing entry points."""

from __future__ import annotations

import numpy as np

__all__ = ["check_point_array", "check_normal_array"]


def check_point_array(X, *, min_points: int = 1, name: str = "X") -> np.ndarray:
    """Validate and convert an (n, 3) coordinate array to float64."""
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError(
            f"{name} must be a 2D array of shape (n_points, 3), got {arr.shape}"
        )
    if arr.shape[0] < min_points:
        raise ValueError(
            f"{name} must contain at least {min_points} points, got {arr.shape[0]}"
        )
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or infinite coordinates")
    return arr


def check_normal_array(normals, n_points: int, *, name: str = "normals") -> np.ndarray:
    """Validate an (n, 3) unit-vector array matching the point count."""
    arr = np.asarray(normals, dtype=np.float64)
    if arr.shape != (n_points, 3):
        raise ValueError(f"{name} must have shape ({n_points}, 3), got {arr.shape}")
    lengths = np.linalg.norm(arr, axis=1)
    if not np.all(np.abs(lengths - 1.0) <= 1e-6):
        raise ValueError(f"{name} must contain unit vectors")
    return arr
