"""
Detection head semantics: the unified embedding codec, anchor assignment,
the joint loss and postprocessing.

Usage:
    from body_orient.detection import default_grid, total_loss, LossWeights

    grid, anchors = default_grid()
    breakdown = total_loss(raw, gts, LossWeights(), grid, anchors)
"""

from .assignment import AssignmentResult, Match, assign
from .embedding import (AnchorSet, GridSpec, RawPrediction, decode, default_grid,
                        encode_target, invert, representable)
from .factory import LossStrategyFactory
from .interface import IObjectnessTarget, IOrientationDistance
from .losses import (LossBreakdown, LossOptions, LossWeights, batch_loss,
                     loss_settings_from_config, total_loss)
from .postprocess import Detection, nms, nms_per_image, postprocess

__all__ = [
    "GridSpec",
    "AnchorSet",
    "RawPrediction",
    "default_grid",
    "decode",
    "encode_target",
    "invert",
    "representable",
    "Match",
    "AssignmentResult",
    "assign",
    "IOrientationDistance",
    "IObjectnessTarget",
    "LossStrategyFactory",
    "LossWeights",
    "LossOptions",
    "LossBreakdown",
    "loss_settings_from_config",
    "total_loss",
    "batch_loss",
    "Detection",
    "nms",
    "nms_per_image",
    "postprocess",
]
