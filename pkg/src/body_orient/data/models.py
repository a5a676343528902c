"""
Annotation models: ground-truth person instances and dataset statistics.
"""

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, Optional

from ..core.models import AngleRangeError, Box2D


class InstanceSource(Enum):
    """Where an instance's orientation label came from"""
    ORIENTATION_BENCHMARK = "orientation-benchmark"
    RESTORED = "restored"


@dataclass(frozen=True)
class AnnotatedInstance:
    """
    Ground-truth person.

    `orientation` is in degrees [0, 360) or None when unlabelled. Weak labels
    only ever come from restored instances.
    """
    image_id: int
    annotation_id: int
    box: Box2D
    orientation: Optional[float] = None
    weak: bool = False
    source: InstanceSource = InstanceSource.ORIENTATION_BENCHMARK

    def __post_init__(self):
        if self.orientation is not None and not 0.0 <= self.orientation < 360.0:
            raise AngleRangeError(f"orientation must lie in [0, 360), got {self.orientation}")
        if self.weak and self.source is not InstanceSource.RESTORED:
            raise ValueError("weak labels are only allowed on restored instances")

    @property
    def key(self):
        return (self.image_id, self.annotation_id)

    @property
    def unit_orientation(self) -> float:
        return 0.0 if self.orientation is None else self.orientation / 360.0

    def with_box(self, box: Box2D) -> "AnnotatedInstance":
        return replace(self, box=box)


@dataclass
class DatasetStats:
    """Counts for one reconstructed split; instances == strong + weak."""
    split: str
    images: int = 0
    instances: int = 0
    strong: int = 0
    weak: int = 0
    dropped: int = 0
    extras: Dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "split": self.split,
            "images": self.images,
            "instances": self.instances,
            "strong": self.strong,
            "weak": self.weak,
            "dropped": self.dropped,
            **self.extras,
        }
