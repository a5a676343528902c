"""
Loss Strategy Interfaces

Two parts of the loss are open to interpretation and therefore pluggable:

- IOrientationDistance: how the wrapped angular error is penalised
  (squared shorter-arc distance, or its absolute value)
- IObjectnessTarget: which overlap score scales the objectness BCE target
  (clamped CIoU, or plain IoU)

Every implementation returns values together with their derivative so the
losses stay analytically differentiable, and reports where it is not smooth
so gradient checks can steer clear of those points.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from typing import Tuple

import numpy as np

from ..core.geometry import CIoUResult


class IOrientationDistance(ABC):
    """
    Elementwise penalty on unit-angle predictions vs targets.

    **Key Methods:**
    - value_and_grad(): penalty and d(penalty)/d(prediction)
    - near_kink(): mask of points within `margin` of a non-smooth locus
    """

    name: str = ""

    @abstractmethod
    def value_and_grad(self, pred: np.ndarray, target: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Args:
            pred: predicted unit angles in (0, 1)
            target: target unit angles in [0, 1)

        Returns:
            (penalty, derivative w.r.t. pred), both shaped like pred
        """

    @abstractmethod
    def near_kink(self, pred: np.ndarray, target: np.ndarray, margin: float) -> np.ndarray:
        """Boolean mask of elements too close to a branch switch."""


class IObjectnessTarget(ABC):
    """Overlap quality used as the positive BCE target before clamping to [0, 1]."""

    name: str = ""

    @abstractmethod
    def quality(self, overlap: CIoUResult) -> Tuple[np.ndarray, np.ndarray]:
        """
        Returns:
            (quality per match, d(quality)/d(pred cx, cy, w, h) per match)
        """

    def near_kink(self, overlap: CIoUResult, margin: float) -> np.ndarray:
        """
        Clamp boundaries at 0 and 1 are not differentiable. The lower clamp
        only bends the loss where the quality actually crosses zero, i.e. it
        is near zero and still moving.
        """
        q, grad = self.quality(overlap)
        crossing = (np.abs(q) < margin) & np.any(grad != 0.0, axis=-1)
        return crossing | (np.abs(q - 1.0) < margin)
