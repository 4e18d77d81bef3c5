"""Input validation helpers and the package's exception types."""
from __future__ import annotations

import numpy as np


class OccnavError(Exception):
    """Base class for all errors raised by occnav."""


class StructuralError(OccnavError, ValueError):
    """Array shape or layout does not match its metadata."""


class DomainError(OccnavError, ValueError):
    """Argument outside the domain an operation is defined on."""


class ConfigurationError(OccnavError, ValueError):
    pass


class GenerationError(OccnavError, RuntimeError):
    pass


class CalibrationError(OccnavError, ValueError):
    pass


class NumericalError(OccnavError, ArithmeticError):
    pass


def check_positive(name: str, value: float) -> float:
    value = float(value)
    if not value > 0:
        raise DomainError(f"{name} must be > 0, got {value}")
    return value


def check_nonnegative(name: str, value: float) -> float:
    value = float(value)
    if not value >= 0:
        raise DomainError(f"{name} must be >= 0, got {value}")
    return value


def check_binary(name: str, arr) -> np.ndarray:
    """Return ``arr`` as a uint8 array, raising unless every entry is 0 or 1."""
    a = np.asarray(arr)
    if a.dtype == bool:
        return a.astype(np.uint8)
    if a.size and not np.isin(a, (0, 1)).all():
        raise StructuralError(f"{name} must contain only 0/1 values")
    return a.astype(np.uint8)


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str = "inputs") -> None:
    if np.shape(a) != np.shape(b):
        raise StructuralError(f"{what} have mismatched shapes {np.shape(a)} vs {np.shape(b)}")


def check_finite(name: str, arr) -> np.ndarray:
    a = np.asarray(arr, dtype=float)
    if not np.isfinite(a).all():
        raise DomainError(f"{name} must be finite")
    return a


def check_points2d(name: str, arr) -> np.ndarray:
    a = np.asarray(arr, dtype=float)
    if a.ndim != 2 or a.shape[1] != 2:
        raise StructuralError(f"{name} must have shape (n, 2), got {a.shape}")
    return a
