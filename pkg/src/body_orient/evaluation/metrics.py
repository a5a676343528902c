"""
Evaluation metrics for joint body detection and orientation estimation.

- match(): per-image greedy one-to-one matching by descending score
- orientation_metrics(): wrapped MAE and Acc-X over matched pairs
- average_precision() / ap_coco(): 101-point interpolated AP
- recall(): fraction of GTs found above a confidence threshold
- evaluate(): all of the above in one EvalReport

Orientation error is only measured on matched pairs; missed people show up in
Recall instead. With `exclude_weak`, weakly labelled GTs become "ignore"
regions: a prediction landing on one is neither a true nor a false positive.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ..core.angles import wrapped_deg_diff
from ..core.geometry import pairwise_iou
from ..data.models import AnnotatedInstance
from ..detection.postprocess import Detection

logger = logging.getLogger(__name__)

ACC_THRESHOLDS = (5.0, 15.0, 22.5, 30.0, 45.0)
COCO_IOU_THRESHOLDS = tuple(np.round(np.linspace(0.5, 0.95, 10), 2))
RECALL_SAMPLES = np.linspace(0.0, 1.0, 101)


@dataclass
class ImageMatch:
    """Matching result of one image. Indices refer to the per-image input lists."""
    pairs: List[Tuple[int, int, float]] = field(default_factory=list)  # (pred, gt, iou)
    false_positives: List[int] = field(default_factory=list)
    ignored: List[int] = field(default_factory=list)
    missed: List[int] = field(default_factory=list)


@dataclass
class MatchResult:
    pairs: List[Tuple[Detection, AnnotatedInstance]] = field(default_factory=list)
    false_positives: List[Detection] = field(default_factory=list)
    missed: List[AnnotatedInstance] = field(default_factory=list)


@dataclass
class OrientationMetrics:
    mae: Optional[float]
    acc: Dict[float, Optional[float]]
    count: int


@dataclass
class EvalReport:
    """Everything one evaluation run reports. Fractions are in [0, 1]."""
    mae_degrees: Optional[float]
    acc: Dict[float, Optional[float]]
    ap50: Optional[float]
    ap50_95: Optional[float]
    recall: Optional[float]
    num_gt: int
    num_predictions: int
    num_matched: int

    def to_dict(self) -> Dict[str, object]:
        return {
            "mae_degrees": self.mae_degrees,
            "acc": {_acc_label(k): v for k, v in self.acc.items()},
            "ap50": self.ap50,
            "ap50_95": self.ap50_95,
            "recall": self.recall,
            "counts": {"gt": self.num_gt, "predictions": self.num_predictions,
                       "matched": self.num_matched},
        }

    def format_table(self) -> str:
        """Aligned one-row table: MAE | Acc columns | AP | Recall."""
        headers = ["MAE"] + [f"Acc-{_acc_label(t)}" for t in ACC_THRESHOLDS] \
            + ["AP^0.5", "AP^.5:.95", "Recall", "GT", "Pred", "Matched"]
        values = [_fmt(self.mae_degrees)] + [_fmt(self.acc.get(t)) for t in ACC_THRESHOLDS] \
            + [_fmt(self.ap50), _fmt(self.ap50_95), _fmt(self.recall),
               str(self.num_gt), str(self.num_predictions), str(self.num_matched)]
        widths = [max(len(h), len(v)) for h, v in zip(headers, values)]
        head = "  ".join(h.rjust(w) for h, w in zip(headers, widths))
        row = "  ".join(v.rjust(w) for v, w in zip(values, widths))
        return f"{head}\n{row}"


def _acc_label(threshold: float) -> str:
    return f"{threshold:g}"


def _fmt(value: Optional[float]) -> str:
    return "n/a" if value is None else f"{value:.3f}"


def _group(items: Iterable, key) -> Dict[int, list]:
    out: Dict[int, list] = {}
    for item in items:
        out.setdefault(key(item), []).append(item)
    return out


def match_image(preds: Sequence[Detection], gts: Sequence[AnnotatedInstance], iou_thresh: float,
                ignore: Optional[Sequence[bool]] = None) -> ImageMatch:
    """
    Greedy matching on one image.

    Predictions are visited by descending score (earlier index first on
    ties). Each claims the unclaimed, non-ignored GT with the highest IoU >=
    iou_thresh (lowest GT index on ties). A prediction without such a GT that
    overlaps an ignored GT by >= iou_thresh is ignored; otherwise it is a
    false positive.
    """
    result = ImageMatch()
    ignore = list(ignore) if ignore is not None else [False] * len(gts)
    if not preds:
        result.missed = [j for j in range(len(gts)) if not ignore[j]]
        return result
    order = np.argsort(-np.array([p.score for p in preds]), kind="stable")
    if not gts:
        result.false_positives = [int(i) for i in order]
        return result
    overlaps = pairwise_iou(np.array([p.box.to_corners() for p in preds]),
                            np.array([g.box.to_corners() for g in gts]))
    ignored_mask = np.array(ignore, dtype=bool)
    claimed = np.zeros(len(gts), dtype=bool)
    for i in order:
        row = overlaps[i]
        open_gts = (~claimed) & (~ignored_mask) & (row >= iou_thresh)
        if open_gts.any():
            candidates = np.where(open_gts, row, -1.0)
            j = int(np.argmax(candidates))  # first maximum = lowest index on ties
            claimed[j] = True
            result.pairs.append((int(i), j, float(row[j])))
        elif np.any(ignored_mask & (row >= iou_thresh)):
            result.ignored.append(int(i))
        else:
            result.false_positives.append(int(i))
    result.missed = [j for j in range(len(gts)) if not claimed[j] and not ignored_mask[j]]
    return result


def match(preds: Sequence[Detection], gts: Sequence[AnnotatedInstance], iou_thresh: float = 0.5,
          exclude_weak: bool = False) -> MatchResult:
    """Per-image greedy matching across a whole prediction/GT set."""
    preds_by_image = _group(preds, lambda d: d.image_id)
    gts_by_image = _group(gts, lambda g: g.image_id)
    result = MatchResult()
    for image_id in sorted(set(preds_by_image) | set(gts_by_image)):
        image_preds = preds_by_image.get(image_id, [])
        image_gts = gts_by_image.get(image_id, [])
        image_match = match_image(image_preds, image_gts, iou_thresh,
                                  [exclude_weak and g.weak for g in image_gts])
        result.pairs.extend((image_preds[i], image_gts[j]) for i, j, _ in image_match.pairs)
        result.false_positives.extend(image_preds[i] for i in image_match.false_positives)
        result.missed.extend(image_gts[j] for j in image_match.missed)
    return result


def orientation_metrics(pairs: Sequence[Tuple[Detection, AnnotatedInstance]],
                        thresholds: Sequence[float] = ACC_THRESHOLDS) -> OrientationMetrics:
    """Wrapped MAE and Acc-X (error <= X degrees) over matched, orientation-labelled pairs."""
    labelled = [(d, g) for d, g in pairs if g.orientation is not None]
    if not labelled:
        return OrientationMetrics(mae=None, acc={t: None for t in thresholds}, count=0)
    errors = wrapped_deg_diff(np.array([d.orientation for d, _ in labelled]),
                              np.array([g.orientation for _, g in labelled]))
    acc = {t: float(np.mean(errors <= t)) for t in thresholds}
    return OrientationMetrics(mae=float(np.mean(errors)), acc=acc, count=len(labelled))


def _tp_flags(preds: Sequence[Detection], gts: Sequence[AnnotatedInstance], iou_thresh: float,
              exclude_weak: bool) -> Tuple[np.ndarray, np.ndarray, int]:
    """Scores and TP flags of all non-ignored predictions, plus the GT count."""
    preds_by_image = _group(preds, lambda d: d.image_id)
    gts_by_image = _group(gts, lambda g: g.image_id)
    records = []
    for image_id in sorted(preds_by_image):
        image_preds = preds_by_image[image_id]
        image_gts = gts_by_image.get(image_id, [])
        image_match = match_image(image_preds, image_gts, iou_thresh,
                                  [exclude_weak and g.weak for g in image_gts])
        for i, _, _ in image_match.pairs:
            records.append((-image_preds[i].score, image_id, i, 1))
        for i in image_match.false_positives:
            records.append((-image_preds[i].score, image_id, i, 0))
    records.sort()
    num_gt = sum(1 for g in gts if not (exclude_weak and g.weak))
    scores = np.array([-r[0] for r in records], dtype=float)
    flags = np.array([r[3] for r in records], dtype=float)
    return scores, flags, num_gt


def average_precision(preds: Sequence[Detection], gts: Sequence[AnnotatedInstance],
                      iou_thresh: float = 0.5, exclude_weak: bool = False) -> Optional[float]:
    """
    101-point interpolated AP: precision envelope sampled at recall
    0, 0.01, ..., 1. None when there are no ground truths.
    """
    _, flags, num_gt = _tp_flags(preds, gts, iou_thresh, exclude_weak)
    if num_gt == 0:
        return None
    if flags.size == 0:
        return 0.0
    tp = np.cumsum(flags)
    fp = np.cumsum(1.0 - flags)
    rc = tp / num_gt
    pr = tp / (tp + fp)
    # precision envelope, right to left
    for i in range(pr.size - 1, 0, -1):
        if pr[i] > pr[i - 1]:
            pr[i - 1] = pr[i]
    inds = np.searchsorted(rc, RECALL_SAMPLES, side="left")
    sampled = np.array([pr[i] if i < pr.size else 0.0 for i in inds])
    return float(np.mean(sampled))


def ap_coco(preds: Sequence[Detection], gts: Sequence[AnnotatedInstance],
            exclude_weak: bool = False) -> Optional[float]:
    """Mean AP over IoU thresholds 0.50, 0.55, ..., 0.95."""
    values = [average_precision(preds, gts, t, exclude_weak) for t in COCO_IOU_THRESHOLDS]
    if values[0] is None:
        return None
    return float(np.mean(values))


def recall(preds: Sequence[Detection], gts: Sequence[AnnotatedInstance], iou_thresh: float = 0.5,
           conf_thresh: float = 0.25, exclude_weak: bool = False) -> Optional[float]:
    """Fraction of GTs matched by predictions scoring above `conf_thresh`."""
    counted = [g for g in gts if not (exclude_weak and g.weak)]
    if not counted:
        return None
    confident = [d for d in preds if d.score > conf_thresh]
    result = match(confident, gts, iou_thresh, exclude_weak)
    return len(result.pairs) / len(counted)


def evaluate(preds: Sequence[Detection], gts: Sequence[AnnotatedInstance], iou_thresh: float = 0.5,
             conf_thresh: float = 0.25, exclude_weak: bool = False) -> EvalReport:
    """
    Full report. Orientation metrics and Recall use predictions above
    `conf_thresh`; AP uses every prediction.
    """
    confident = [d for d in preds if d.score > conf_thresh]
    matched = match(confident, gts, iou_thresh, exclude_weak)
    orientation = orientation_metrics(matched.pairs)
    counted_gts = [g for g in gts if not (exclude_weak and g.weak)]
    report = EvalReport(
        mae_degrees=orientation.mae,
        acc=orientation.acc,
        ap50=average_precision(preds, gts, 0.5, exclude_weak),
        ap50_95=ap_coco(preds, gts, exclude_weak),
        recall=(len(matched.pairs) / len(counted_gts)) if counted_gts else None,
        num_gt=len(counted_gts),
        num_predictions=len(preds),
        num_matched=len(matched.pairs),
    )
    logger.info(f"evaluated {len(preds)} predictions against {len(counted_gts)} GTs: "
                f"MAE={_fmt(report.mae_degrees)} AP50={_fmt(report.ap50)}")
    return report
