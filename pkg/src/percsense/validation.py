"""Input validation helpers used by the estimator-style classes and operations."""

import numpy as np

from .errors import ValidationError


def as_float_array(a, name="array"):
    """Coerce to a float64 ndarray, rejecting non-finite entries."""
    arr = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValidationError(f"{name} contains non-finite values")
    return arr


def as_matrix(a, name="X"):
    """Coerce to a finite 2-D float64 array (n_samples, n_features)."""
    arr = as_float_array(a, name)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValidationError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def as_column(a, name="column"):
    """Coerce to a finite 1-D float64 array."""
    arr = as_float_array(a, name)
    arr = np.squeeze(arr)
    if arr.ndim == 0:
        arr = arr[None]
    if arr.ndim != 1:
        raise ValidationError(f"{name} must be 1-D, got shape {arr.shape}")
    return arr


def check_same_length(a, b, name_a="a", name_b="b"):
    if len(a) != len(b):
        raise ValidationError(
            f"{name_a} and {name_b} must have equal length ({len(a)} != {len(b)})"
        )


def check_same_shape(x, y, name_a="x", name_b="y"):
    if x.shape != y.shape:
        raise ValidationError(
            f"{name_a} and {name_b} must have identical shape "
            f"({x.shape} != {y.shape})"
        )


def check_positive(value, name):
    if not np.isfinite(value) or value <= 0:
        raise ValidationError(f"{name} must be a finite positive number, got {value!r}")
