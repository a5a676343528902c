"""
Core kinds: boxes, orientation angles, box geometry and circular arithmetic.
"""

from .angles import (normalize_degrees, wrapped_deg_diff, wrapped_deg_error,
                     wrapped_unit_diff, wrapped_unit_distance)
from .geometry import (CIoUResult, ciou, ciou_with_grad, from_corners, iou,
                       pairwise_iou, to_corners)
from .models import (AngleRangeError, BodyOrientError, Box2D, ConfigError,
                     DatasetFormatError, DownloadError, InvalidBoxError, LabelConflictError,
                     NonFiniteLogitError, OrientationAngle,
                     TrainingDivergedError, UncoveredInstanceError,
                     UnrepresentableTargetError)

__all__ = [
    "Box2D",
    "OrientationAngle",
    "CIoUResult",
    "iou",
    "ciou",
    "ciou_with_grad",
    "pairwise_iou",
    "to_corners",
    "from_corners",
    "wrapped_unit_distance",
    "wrapped_deg_error",
    "wrapped_unit_diff",
    "wrapped_deg_diff",
    "normalize_degrees",
    # Errors
    "BodyOrientError",
    "InvalidBoxError",
    "AngleRangeError",
    "NonFiniteLogitError",
    "UnrepresentableTargetError",
    "DatasetFormatError",
    "LabelConflictError",
    "UncoveredInstanceError",
    "ConfigError",
    "TrainingDivergedError",
    "DownloadError",
]
