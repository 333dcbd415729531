"""Small input-validation helpers shared by the estimators."""

import numbers

import numpy as np

from .exceptions import ShapeMismatch


def as_float_array(x, ndim, name="X"):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != ndim:
        raise ShapeMismatch(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def check_shape(arr, shape, name):
    if tuple(arr.shape) != tuple(shape):
        raise ShapeMismatch(f"{name} has shape {arr.shape}, expected {tuple(shape)}")


def check_positive(value, name, strict=True):
    if not isinstance(value, numbers.Real) or not np.isfinite(value):
        raise ValueError(f"{name} must be a finite real, got {value!r}")
    if (strict and value <= 0) or (not strict and value < 0):
        bound = "> 0" if strict else ">= 0"
        raise ValueError(f"{name} must be {bound}, got {value!r}")
    return value


def check_generator(random_state):
    """Turn None / int / SeedSequence / Generator into a numpy Generator."""
    if isinstance(random_state, np.random.Generator):
        return random_state
    return np.random.default_rng(random_state)
