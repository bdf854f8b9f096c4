"""Input-validation helpers used by the public dataclasses and estimators.

All helpers raise ValueError with a message naming the offending argument,
so dataclass __post_init__ hooks can delegate to them directly.
"""

from __future__ import annotations

import numpy as np


def as_float_array(x, name: str, shape: tuple[int, ...] | None = None) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if shape is not None and arr.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


def as_position(x, name: str = "position") -> np.ndarray:
    """Coerce to a finite 3-vector of floats."""
    return as_float_array(x, name, shape=(3,))


def as_unit_vector(x, name: str = "direction") -> np.ndarray:
    """Coerce to a 3-vector and normalize; zero vectors are rejected."""
    v = as_float_array(x, name, shape=(3,))
    n = np.linalg.norm(v)
    if n == 0.0:
        raise ValueError(f"{name} must be nonzero")
    return v / n


def check_positive(value: float, name: str) -> float:
    value = float(value)
    if not np.isfinite(value) or value <= 0.0:
        raise ValueError(f"{name} must be positive and finite, got {value}")
    return value


def check_nonnegative(value: float, name: str) -> float:
    value = float(value)
    if not np.isfinite(value) or value < 0.0:
        raise ValueError(f"{name} must be nonnegative and finite, got {value}")
    return value


def check_index_range(value: int, upper: int, name: str) -> int:
    value = int(value)
    if not 0 <= value < upper:
        raise ValueError(f"{name} must lie in [0, {upper}), got {value}")
    return value


def check_spectrum(
    q,
    name: str = "spectrum",
    *,
    n_delay: int | None = None,
    n_beam: int | None = None,
) -> np.ndarray:
    """Validate a nonnegative 2-D power spectrum, optionally with fixed shape."""
    arr = np.asarray(q, dtype=float)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {arr.shape}")
    if n_delay is not None and arr.shape != (n_delay, n_beam):
        raise ValueError(
            f"{name} must have shape ({n_delay}, {n_beam}), got {arr.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    if np.any(arr < 0.0):
        raise ValueError(f"{name} must be nonnegative")
    return arr
