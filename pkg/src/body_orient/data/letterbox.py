"""
Letterboxing: aspect-preserving resize plus symmetric padding to the network input.
"""

from dataclasses import dataclass
from typing import List, Sequence, Tuple

from ..core.models import Box2D
from .models import AnnotatedInstance


@dataclass(frozen=True)
class Letterbox:
    """
    Maps original image pixels to network pixels and back.

    scale = min(target_w / W, target_h / H); the short side is padded
    equally on both ends (padding may be fractional).
    """
    width: float
    height: float
    target: Tuple[int, int] = (1024, 1024)

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise ValueError(f"image dims must be positive, got {self.width}x{self.height}")
        if not (self.target[0] > 0 and self.target[1] > 0):
            raise ValueError(f"target dims must be positive, got {self.target}")

    @property
    def scale(self) -> float:
        return min(self.target[0] / self.width, self.target[1] / self.height)

    @property
    def pad(self) -> Tuple[float, float]:
        return ((self.target[0] - self.width * self.scale) / 2.0,
                (self.target[1] - self.height * self.scale) / 2.0)

    def forward(self, box: Box2D) -> Box2D:
        pad_x, pad_y = self.pad
        s = self.scale
        return Box2D(box.cx * s + pad_x, box.cy * s + pad_y, box.w * s, box.h * s)

    def inverse(self, box: Box2D) -> Box2D:
        pad_x, pad_y = self.pad
        s = self.scale
        return Box2D((box.cx - pad_x) / s, (box.cy - pad_y) / s, box.w / s, box.h / s)


def letterbox_transform(instances: Sequence[AnnotatedInstance], width: float, height: float,
                        target: Tuple[int, int] = (1024, 1024)
                        ) -> Tuple[List[AnnotatedInstance], Letterbox]:
    """Instances in network coordinates plus the transform (use .inverse to go back)."""
    letterbox = Letterbox(width, height, target)
    return [inst.with_box(letterbox.forward(inst.box)) for inst in instances], letterbox
