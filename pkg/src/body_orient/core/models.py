"""
Common models and exceptions shared by every body_orient module.

Box2D and OrientationAngle are immutable value types; construction validates
them so downstream code never sees a degenerate box or an out-of-range angle.
"""

from dataclasses import dataclass
from typing import List, Optional, Tuple

Corners = Tuple[float, float, float, float]


class BodyOrientError(Exception):
    """Root of every error raised by body_orient."""


class InvalidBoxError(BodyOrientError, ValueError):
    """Raised when a box has non-positive width or height."""


class AngleRangeError(BodyOrientError, ValueError):
    """Raised when an angle falls outside its half-open range."""


class NonFiniteLogitError(BodyOrientError, ValueError):
    """Raised when a raw head output contains NaN or infinity."""


class UnrepresentableTargetError(BodyOrientError, ValueError):
    """
    Raised when a ground-truth box cannot be produced by the decode map at the
    requested (scale, cell, anchor) channel. Seeing this means the assignment
    step handed out a channel it should not have.
    """


class DatasetFormatError(BodyOrientError, ValueError):
    """Annotation file could not be parsed. `offset` is the failing position."""

    def __init__(self, message: str, offset: Optional[int] = None):
        super().__init__(message if offset is None else f"{message} (at offset {offset})")
        self.offset = offset


class LabelConflictError(BodyOrientError, ValueError):
    """Duplicate or inconsistent orientation labels."""


class UncoveredInstanceError(BodyOrientError, ValueError):
    """Person instances that have neither a strong nor a weak orientation label."""

    def __init__(self, missing: List[Tuple[int, int]]):
        listed = ", ".join(f"{image_id}:{ann_id}" for image_id, ann_id in missing[:50])
        more = "" if len(missing) <= 50 else f" (+{len(missing) - 50} more)"
        super().__init__(
            f"{len(missing)} person instance(s) have no orientation label "
            f"(image:annotation): {listed}{more}"
        )
        self.missing = missing


class ConfigError(BodyOrientError):
    """Invalid configuration. `key` names the offending dotted key."""

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key


class TrainingDivergedError(BodyOrientError):
    """Raised when the training loss becomes non-finite."""

    def __init__(self, step: int, value: float):
        super().__init__(f"training diverged at step {step}: loss={value}")
        self.step = step
        self.value = value


@dataclass(frozen=True)
class Box2D:
    """Axis-aligned box in pixels, center-size parameterization."""
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise InvalidBoxError(f"box needs positive size, got w={self.w} h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    def to_corners(self) -> Corners:
        """(x1, y1, x2, y2)"""
        half_w = self.w / 2.0
        half_h = self.h / 2.0
        return (self.cx - half_w, self.cy - half_h, self.cx + half_w, self.cy + half_h)

    @classmethod
    def from_corners(cls, corners: Corners) -> "Box2D":
        x1, y1, x2, y2 = corners
        return cls(cx=(x1 + x2) / 2.0, cy=(y1 + y2) / 2.0, w=x2 - x1, h=y2 - y1)

    @classmethod
    def from_xywh(cls, x: float, y: float, w: float, h: float) -> "Box2D":
        """Top-left + size layout used by detection-benchmark annotation files."""
        return cls(cx=x + w / 2.0, cy=y + h / 2.0, w=w, h=h)

    def to_xywh(self) -> Tuple[float, float, float, float]:
        x1, y1, _, _ = self.to_corners()
        return (x1, y1, self.w, self.h)


@dataclass(frozen=True)
class OrientationAngle:
    """Body orientation; `degrees` in [0, 360), `unit` = degrees / 360 in [0, 1)."""
    degrees: float

    def __post_init__(self):
        if not 0.0 <= self.degrees < 360.0:
            raise AngleRangeError(f"orientation must lie in [0, 360), got {self.degrees}")

    @property
    def unit(self) -> float:
        return self.degrees / 360.0

    @classmethod
    def from_unit(cls, unit: float) -> "OrientationAngle":
        if not 0.0 <= unit < 1.0:
            raise AngleRangeError(f"unit angle must lie in [0, 1), got {unit}")
        return cls(degrees=unit * 360.0)


class DownloadError(BodyOrientError):
    """A download failed after all retries. `status` is the last HTTP status, if any."""

    def __init__(self, url: str, message: str, status: Optional[int] = None):
        super().__init__(f"download of {url} failed: {message}")
        self.url = url
        self.status = status
