"""
Loss Strategy Factory

Registry of the interchangeable loss pieces, keyed by the names used in the
`loss` section of the config file.

**Usage Examples:**
    distance = LossStrategyFactory.create_distance("squared")
    target = LossStrategyFactory.create_objectness_target("ciou")

    # Plug in a new variant without touching the loss code
    LossStrategyFactory.register_distance("huber", HuberWrappedDistance)
"""

from typing import Dict, Type

import numpy as np

from ..core.angles import wrapped_unit_diff
from ..core.geometry import CIoUResult
from ..core.models import ConfigError
from .interface import IObjectnessTarget, IOrientationDistance


class SquaredWrappedDistance(IOrientationDistance):
    """Wrapped MSE term: min(|d|, 1 - |d|) ** 2."""

    name = "squared"

    def value_and_grad(self, pred, target):
        diff = pred - target
        wrapped = wrapped_unit_diff(pred, target)
        wraps = np.abs(diff) > 0.5
        grad = np.where(wraps, -2.0 * np.sign(diff) * wrapped, 2.0 * diff)
        return wrapped ** 2, grad

    def near_kink(self, pred, target, margin):
        return np.abs(np.abs(pred - target) - 0.5) < margin


class AbsoluteWrappedDistance(IOrientationDistance):
    """Unsquared shorter-arc distance min(|d|, 1 - |d|)."""

    name = "absolute"

    def value_and_grad(self, pred, target):
        diff = pred - target
        wraps = np.abs(diff) > 0.5
        grad = np.where(wraps, -np.sign(diff), np.sign(diff))
        return wrapped_unit_diff(pred, target), grad

    def near_kink(self, pred, target, margin):
        gap = np.abs(pred - target)
        return (gap < margin) | (np.abs(gap - 0.5) < margin)


class CIoUObjectnessTarget(IObjectnessTarget):
    name = "ciou"

    def quality(self, overlap: CIoUResult):
        return overlap.ciou, overlap.ciou_grad


class IoUObjectnessTarget(IObjectnessTarget):
    name = "iou"

    def quality(self, overlap: CIoUResult):
        return overlap.iou, overlap.iou_grad

    def near_kink(self, overlap: CIoUResult, margin: float) -> np.ndarray:
        # IoU never goes negative, so the lower clamp is flat on both sides
        return np.abs(overlap.iou - 1.0) < margin


class LossStrategyFactory:
    """Factory for orientation-distance and objectness-target strategies."""

    _DISTANCE_REGISTRY: Dict[str, Type[IOrientationDistance]] = {
        "squared": SquaredWrappedDistance,
        "absolute": AbsoluteWrappedDistance,
    }

    _OBJECTNESS_REGISTRY: Dict[str, Type[IObjectnessTarget]] = {
        "ciou": CIoUObjectnessTarget,
        "iou": IoUObjectnessTarget,
    }

    @classmethod
    def create_distance(cls, name: str) -> IOrientationDistance:
        """
        Raises:
            ConfigError: unknown distance name
        """
        if name not in cls._DISTANCE_REGISTRY:
            raise ConfigError(f"Unsupported orientation distance: {name}. "
                              f"Available: {list(cls._DISTANCE_REGISTRY)}",
                              key="loss.orientation_distance")
        return cls._DISTANCE_REGISTRY[name]()

    @classmethod
    def create_objectness_target(cls, name: str) -> IObjectnessTarget:
        if name not in cls._OBJECTNESS_REGISTRY:
            raise ConfigError(f"Unsupported objectness target: {name}. "
                              f"Available: {list(cls._OBJECTNESS_REGISTRY)}",
                              key="loss.objectness_iou")
        return cls._OBJECTNESS_REGISTRY[name]()

    @classmethod
    def register_distance(cls, name: str, strategy: Type[IOrientationDistance]) -> None:
        if not issubclass(strategy, IOrientationDistance):
            raise TypeError("Distance class must implement IOrientationDistance")
        cls._DISTANCE_REGISTRY[name] = strategy

    @classmethod
    def register_objectness_target(cls, name: str, strategy: Type[IObjectnessTarget]) -> None:
        if not issubclass(strategy, IObjectnessTarget):
            raise TypeError("Target class must implement IObjectnessTarget")
        cls._OBJECTNESS_REGISTRY[name] = strategy

    @classmethod
    def get_available_distances(cls) -> Dict[str, str]:
        return {name: (klass.__doc__ or "").strip() for name, klass in cls._DISTANCE_REGISTRY.items()}

    @classmethod
    def get_available_objectness_targets(cls) -> Dict[str, str]:
        return {name: klass.__name__ for name, klass in cls._OBJECTNESS_REGISTRY.items()}
