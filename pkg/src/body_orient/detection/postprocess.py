"""
Postprocessing: dense embeddings -> scored detections -> greedy NMS.

Orientation rides along unchanged: a kept detection reports its own angle,
never an average over the boxes it suppressed.
"""

import logging
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Sequence

import numpy as np

from ..core.geometry import pairwise_iou
from ..core.models import AngleRangeError, Box2D
from .embedding import AnchorSet, GridSpec, RawPrediction, decode_scale

logger = logging.getLogger(__name__)

SCORE_MODES = ("objectness", "objectness_x_class")


@dataclass(frozen=True)
class Detection:
    """Final detection; orientation in degrees [0, 360)."""
    box: Box2D
    score: float
    orientation: float
    image_id: int = 0

    def __post_init__(self):
        if not self.score > 0.0:
            raise ValueError(f"detection score must be positive, got {self.score}")
        if not 0.0 <= self.orientation < 360.0:
            raise AngleRangeError(f"orientation must lie in [0, 360), got {self.orientation}")


def confidence_filter(raw: RawPrediction, grid: GridSpec, anchors: AnchorSet, conf_thresh: float,
                      score_mode: str = "objectness", image_id: int = 0) -> List[Detection]:
    """
    Keep channels whose score exceeds `conf_thresh`.

    score = p (default) or p * c. Detections come out in channel order:
    scale, row, column, anchor.
    """
    if not 0.0 <= conf_thresh <= 1.0:
        raise ValueError(f"conf_thresh must lie in [0, 1], got {conf_thresh}")
    if score_mode not in SCORE_MODES:
        raise ValueError(f"score_mode must be one of {SCORE_MODES}")
    detections = []
    for scale, raw_scale in enumerate(raw.scales):
        decoded = decode_scale(raw_scale, scale, grid, anchors)
        scores = decoded.objectness
        if score_mode == "objectness_x_class":
            scores = scores * decoded.class_score
        keep = np.argwhere(scores > conf_thresh)
        for gy, gx, a in keep:
            cx, cy, w, h = decoded.boxes[gy, gx, a]
            degrees = float(decoded.orientation[gy, gx, a]) * 360.0
            detections.append(Detection(box=Box2D(float(cx), float(cy), float(w), float(h)),
                                        score=float(scores[gy, gx, a]),
                                        orientation=degrees if degrees < 360.0 else 0.0,
                                        image_id=image_id))
    logger.debug(f"confidence filter kept {len(detections)} detections at {conf_thresh}")
    return detections


def nms(dets: Sequence[Detection], iou_thresh: float) -> List[Detection]:
    """
    Greedy NMS: highest score first (earlier index on ties); drop every
    remaining detection whose IoU with the kept one exceeds `iou_thresh`.
    """
    if not 0.0 < iou_thresh < 1.0:
        raise ValueError(f"iou_thresh must lie in (0, 1), got {iou_thresh}")
    if not dets:
        return []
    corners = np.array([d.box.to_corners() for d in dets], dtype=float)
    scores = np.array([d.score for d in dets], dtype=float)
    # stable sort on -score keeps earlier indices first among equal scores
    order = np.argsort(-scores, kind="stable")
    overlaps = pairwise_iou(corners, corners)
    keep = []
    while order.size > 0:
        i = order[0]
        keep.append(int(i))
        rest = order[1:]
        order = rest[overlaps[i, rest] <= iou_thresh]
    return [dets[i] for i in keep]


def nms_per_image(dets: Sequence[Detection], iou_thresh: float) -> List[Detection]:
    """NMS applied independently per image id; output grouped by ascending image id."""
    out: List[Detection] = []
    for image_id in sorted({d.image_id for d in dets}):
        out.extend(nms([d for d in dets if d.image_id == image_id], iou_thresh))
    return out


def map_boxes(dets: Sequence[Detection], transform: Callable[[Box2D], Box2D],
              image_id: Optional[int] = None) -> List[Detection]:
    """Move detections into another frame, e.g. back out of the letterbox."""
    return [replace(d, box=transform(d.box), image_id=d.image_id if image_id is None else image_id)
            for d in dets]


def postprocess(raw: RawPrediction, grid: GridSpec, anchors: AnchorSet, conf_thresh: float = 0.25,
                iou_thresh: float = 0.45, score_mode: str = "objectness", image_id: int = 0,
                transform: Optional[Callable[[Box2D], Box2D]] = None) -> List[Detection]:
    """confidence_filter -> nms -> optional un-letterbox transform."""
    kept = nms(confidence_filter(raw, grid, anchors, conf_thresh, score_mode, image_id), iou_thresh)
    return map_boxes(kept, transform) if transform is not None else kept
