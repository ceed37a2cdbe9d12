"""Input checks shared by the estimators."""

from __future__ import annotations

import numpy as np
from sklearn.utils.validation import check_array

from .mesh import Mesh


def is_mesh_collection(X) -> bool:
    return isinstance(X, (list, tuple)) and len(X) > 0 and all(isinstance(m, Mesh) for m in X)


def check_cloud(cloud) -> np.ndarray:
    """A single (n, 3) finite float64 cloud with at least one point."""
    arr = check_array(cloud, dtype=np.float64, ensure_min_samples=1)
    if arr.shape[1] != 3:
        raise ValueError(f"point cloud must have 3 columns, got {arr.shape[1]}")
    return arr


def check_clouds(X) -> np.ndarray:
    """A batch of equally sized clouds as a (N, n, 3) float64 array."""
    if isinstance(X, np.ndarray) and X.ndim == 2:
        X = X[None]
    arr = check_array(X, dtype=np.float64, allow_nd=True, ensure_min_samples=1)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected clouds shaped (N, n, 3), got {arr.shape}")
    if arr.shape[1] < 1:
        raise ValueError("clouds must contain at least one point")
    return arr


def check_labels(y, n_classes: int | None = None) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or not np.issubdtype(y.dtype, np.integer):
        raise ValueError("labels must be a 1-D integer array")
    if y.min() < 0 or (n_classes is not None and y.max() >= n_classes):
        raise ValueError(f"labels out of range for {n_classes} classes")
    return y.astype(np.int64)
