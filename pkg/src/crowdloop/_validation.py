"""Input validation helpers shared by the estimators and pipeline functions."""

from __future__ import annotations

import numpy as np

from .errors import NonFiniteValue


def as_float_array(x, name: str = "array", dtype=np.float64) -> np.ndarray:
    """Coerce to a contiguous float ndarray and reject non-finite entries."""
    arr = np.asarray(x, dtype=dtype)
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue(f"{name} contains non-finite values")
    return np.ascontiguousarray(arr)


def check_features(x, name: str = "X") -> np.ndarray:
    """Validate a 2-D feature matrix (rows = items)."""
    arr = as_float_array(x, name)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def check_prob_rows(p, name: str = "probabilities", tol: float = 1e-6) -> np.ndarray:
    """Validate that every row of ``p`` is a probability vector."""
    arr = as_float_array(p, name)
    rows = arr if arr.ndim == 2 else arr[None, :]
    if np.any(rows < -tol):
        raise ValueError(f"{name} has negative entries")
    sums = rows.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > tol):
        raise ValueError(f"{name} rows must sum to 1 (max deviation "
                         f"{np.max(np.abs(sums - 1.0)):.3g})")
    return arr


def check_row_stochastic(m, name: str = "matrix", tol: float = 1e-6) -> np.ndarray:
    """Validate a square row-stochastic matrix."""
    arr = check_prob_rows(m, name, tol=tol)
    if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
        raise ValueError(f"{name} must be square, got shape {arr.shape}")
    return arr


def check_labels(y, n_classes: int, name: str = "labels") -> np.ndarray:
    """Validate an integer label vector with entries in [0, n_classes)."""
    arr = np.asarray(y)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D")
    if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
        raise ValueError(f"{name} entries must lie in [0, {n_classes})")
    return arr.astype(np.int64)
