"""Small input-validation helpers used at module boundaries."""

from __future__ import annotations

from datetime import datetime

import numpy as np

from .errors import NonFiniteError, ShapeError


def check_matrix(x, name: str = "array") -> np.ndarray:
    """Coerce to a 2-D float64 array, rejecting anything else."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name}: expected a 2-D array, got ndim={arr.ndim}")
    return arr


def check_finite(arr: np.ndarray, name: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError(f"{name}: contains NaN or infinite entries")
    return arr


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "arrays") -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what}: shapes {a.shape} and {b.shape} differ")


def check_square(arr: np.ndarray, name: str = "matrix") -> np.ndarray:
    arr = check_matrix(arr, name)
    if arr.shape[0] != arr.shape[1]:
        raise ShapeError(f"{name}: expected square matrix, got {arr.shape}")
    return arr


def as_datetime(value, name: str = "timestamp") -> datetime:
    """Parse an ISO-8601 local timestamp (datetime passes through)."""
    if isinstance(value, datetime):
        return value
    try:
        return datetime.fromisoformat(str(value))
    except ValueError as exc:
        raise ValueError(f"{name}: {value!r} is not an ISO-8601 timestamp") from exc
