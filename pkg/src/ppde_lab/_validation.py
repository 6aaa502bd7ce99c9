"""Small input checks shared by the estimators and the CLI."""
import numbers

import numpy as np

from .errors import BadParams, DimensionMismatch


def check_positive_int(value, name: str) -> int:
    if not isinstance(value, numbers.Integral) or value < 1:
        raise BadParams(f"{name} must be a positive integer, got {value!r}")
    return int(value)


def check_positive(value, name: str) -> float:
    if not isinstance(value, numbers.Real) or not value > 0:
        raise BadParams(f"{name} must be > 0, got {value!r}")
    return float(value)


def as_points(X, d: int) -> np.ndarray:
    """Coerce scalars, 1-D lists or ``(n, d)`` arrays to an ``(n, d)`` float array."""
    arr = np.asarray(X, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr[:, None] if d == 1 else arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != d:
        raise DimensionMismatch(f"expected points of dimension {d}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise BadParams("points must be finite")
    return arr
