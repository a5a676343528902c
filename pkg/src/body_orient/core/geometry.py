"""
Box geometry: IoU, complete-IoU (CIoU) and the analytic CIoU gradient.

CIoU = IoU - rho^2 / c^2 - alpha * v, where rho is the center distance, c the
diagonal of the smallest enclosing box, v = 4/pi^2 * (atan(w/h) - atan(W/H))^2
and alpha = v / ((1 - IoU) + v + eps). alpha is differentiated as well, so the
gradient is the exact derivative of the value returned.

Array helpers take boxes as (N, 4) arrays in (cx, cy, w, h) order unless the
name says corners.
"""

import math
from dataclasses import dataclass

import numpy as np

from .models import Box2D

CIOU_EPS = 1e-7
_V_SCALE = 4.0 / math.pi ** 2


@dataclass
class CIoUResult:
    """Per-pair CIoU / IoU values and their gradients w.r.t. the predicted (cx, cy, w, h)."""
    ciou: np.ndarray
    iou: np.ndarray
    ciou_grad: np.ndarray
    iou_grad: np.ndarray


def to_corners(box: Box2D):
    return box.to_corners()


def from_corners(corners) -> Box2D:
    return Box2D.from_corners(corners)


def boxes_to_array(boxes) -> np.ndarray:
    return np.array([[b.cx, b.cy, b.w, b.h] for b in boxes], dtype=float).reshape(-1, 4)


def xywh_to_corners(boxes: np.ndarray) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=float)
    half = boxes[:, 2:4] / 2.0
    return np.concatenate([boxes[:, 0:2] - half, boxes[:, 0:2] + half], axis=1)


def corners_to_xywh(corners: np.ndarray) -> np.ndarray:
    corners = np.asarray(corners, dtype=float)
    return np.concatenate(
        [(corners[:, 0:2] + corners[:, 2:4]) / 2.0, corners[:, 2:4] - corners[:, 0:2]], axis=1
    )


def pairwise_iou(corners_a: np.ndarray, corners_b: np.ndarray) -> np.ndarray:
    """(N, M) IoU matrix for corner-form boxes."""
    a = np.asarray(corners_a, dtype=float).reshape(-1, 4)
    b = np.asarray(corners_b, dtype=float).reshape(-1, 4)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    iw = np.clip(np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0]), 0.0, None)
    ih = np.clip(np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1]), 0.0, None)
    inter = iw * ih
    return inter / (area_a[:, None] + area_b[None, :] - inter)


def iou(a: Box2D, b: Box2D) -> float:
    """Intersection over union of two boxes; disjoint boxes give 0."""
    return float(pairwise_iou(np.array([a.to_corners()]), np.array([b.to_corners()]))[0, 0])


def ciou(a: Box2D, b: Box2D) -> float:
    """Complete IoU of two boxes, in (-1, 1]."""
    result = ciou_with_grad(boxes_to_array([a]), boxes_to_array([b]))
    return float(result.ciou[0])


def ciou_with_grad(pred: np.ndarray, target: np.ndarray, eps: float = CIOU_EPS) -> CIoUResult:
    """
    Row-wise CIoU between predicted and target boxes plus d/d(pred).

    Both inputs are (N, 4) arrays in (cx, cy, w, h). Where max/min are tied
    (coincident edges) the predicted-box branch is taken.
    """
    pred = np.asarray(pred, dtype=float).reshape(-1, 4)
    target = np.asarray(target, dtype=float).reshape(-1, 4)
    pcx, pcy, pw, ph = pred.T
    tcx, tcy, tw, th = target.T

    px1, px2 = pcx - pw / 2.0, pcx + pw / 2.0
    py1, py2 = pcy - ph / 2.0, pcy + ph / 2.0
    tx1, tx2 = tcx - tw / 2.0, tcx + tw / 2.0
    ty1, ty2 = tcy - th / 2.0, tcy + th / 2.0

    # intersection
    iw_raw = np.minimum(px2, tx2) - np.maximum(px1, tx1)
    ih_raw = np.minimum(py2, ty2) - np.maximum(py1, ty1)
    iw = np.maximum(iw_raw, 0.0)
    ih = np.maximum(ih_raw, 0.0)
    inter = iw * ih
    x_live = iw_raw > 0
    y_live = ih_raw > 0
    diw_dx1 = -(x_live & (px1 >= tx1)).astype(float)
    diw_dx2 = (x_live & (px2 <= tx2)).astype(float)
    dih_dy1 = -(y_live & (py1 >= ty1)).astype(float)
    dih_dy2 = (y_live & (py2 <= ty2)).astype(float)
    d_inter = np.stack([
        (diw_dx1 + diw_dx2) * ih,
        (dih_dy1 + dih_dy2) * iw,
        (diw_dx2 - diw_dx1) / 2.0 * ih,
        (dih_dy2 - dih_dy1) / 2.0 * iw,
    ], axis=1)

    union = pw * ph + tw * th - inter
    d_union = -d_inter.copy()
    d_union[:, 2] += ph
    d_union[:, 3] += pw
    iou_val = inter / union
    d_iou = (d_inter * union[:, None] - inter[:, None] * d_union) / (union ** 2)[:, None]

    # enclosing-box diagonal and center distance
    ew = np.maximum(px2, tx2) - np.minimum(px1, tx1)
    eh = np.maximum(py2, ty2) - np.minimum(py1, ty1)
    dew_dx1 = -(px1 <= tx1).astype(float)
    dew_dx2 = (px2 >= tx2).astype(float)
    deh_dy1 = -(py1 <= ty1).astype(float)
    deh_dy2 = (py2 >= ty2).astype(float)
    c2 = ew ** 2 + eh ** 2
    d_c2 = np.stack([
        2.0 * ew * (dew_dx1 + dew_dx2),
        2.0 * eh * (deh_dy1 + deh_dy2),
        ew * (dew_dx2 - dew_dx1),
        eh * (deh_dy2 - deh_dy1),
    ], axis=1)
    dx = pcx - tcx
    dy = pcy - tcy
    rho2 = dx ** 2 + dy ** 2
    d_rho2 = np.zeros_like(pred)
    d_rho2[:, 0] = 2.0 * dx
    d_rho2[:, 1] = 2.0 * dy
    dist = rho2 / c2
    d_dist = (d_rho2 * c2[:, None] - rho2[:, None] * d_c2) / (c2 ** 2)[:, None]

    # aspect-ratio consistency
    delta = np.arctan(pw / ph) - np.arctan(tw / th)
    v = _V_SCALE * delta ** 2
    norm = pw ** 2 + ph ** 2
    d_v = np.zeros_like(pred)
    d_v[:, 2] = 2.0 * _V_SCALE * delta * ph / norm
    d_v[:, 3] = -2.0 * _V_SCALE * delta * pw / norm
    denom = (1.0 - iou_val) + v + eps
    penalty = v ** 2 / denom
    d_penalty = (2.0 * v / denom - v ** 2 / denom ** 2)[:, None] * d_v \
        + (v ** 2 / denom ** 2)[:, None] * d_iou

    ciou_val = iou_val - dist - penalty
    d_ciou = d_iou - d_dist - d_penalty
    return CIoUResult(ciou=ciou_val, iou=iou_val, ciou_grad=d_ciou, iou_grad=d_iou)
