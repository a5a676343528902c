"""
Circular-angle arithmetic.

Orientation is periodic, so every error between two angles is measured along
the shorter arc. Scalar helpers validate their inputs; the array helpers are
the unchecked hot path used by the losses and metrics.
"""

import math

import numpy as np

from .models import AngleRangeError


def _check_unit(value: float, name: str) -> None:
    if not (math.isfinite(value) and 0.0 <= value < 1.0):
        raise AngleRangeError(f"{name} must lie in [0, 1), got {value}")


def _check_degrees(value: float, name: str) -> None:
    if not (math.isfinite(value) and 0.0 <= value < 360.0):
        raise AngleRangeError(f"{name} must lie in [0, 360), got {value}")


def wrapped_unit_distance(a: float, b: float) -> float:
    """Shorter-arc distance between two unit angles, in [0, 0.5]."""
    _check_unit(a, "a")
    _check_unit(b, "b")
    diff = abs(a - b)
    return min(diff, 1.0 - diff)


def wrapped_deg_error(a: float, b: float) -> float:
    """Shorter-arc distance between two angles in degrees, in [0, 180]."""
    _check_degrees(a, "a")
    _check_degrees(b, "b")
    diff = abs(a - b)
    return min(diff, 360.0 - diff)


def normalize_degrees(value: float) -> float:
    """Fold an angle in [0, 360] onto [0, 360); 360 maps to 0."""
    if not (math.isfinite(value) and 0.0 <= value <= 360.0):
        raise AngleRangeError(f"orientation must lie in [0, 360], got {value}")
    return 0.0 if value == 360.0 else float(value)


def wrapped_unit_diff(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Elementwise shorter-arc distance for unit angles (no validation)."""
    diff = np.abs(pred - target)
    return np.minimum(diff, 1.0 - diff)


def wrapped_deg_diff(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Elementwise shorter-arc distance in degrees (no validation)."""
    diff = np.abs(np.asarray(pred, dtype=float) - np.asarray(target, dtype=float))
    return np.minimum(diff, 360.0 - diff)
