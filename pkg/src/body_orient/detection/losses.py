"""
Detection + orientation losses with hand-derived gradients.

    L = alpha * L_obj + beta * L_box + lam * L'_ori

- L_obj: BCE between objectness and a target that is 0 on negatives and the
  clamped overlap quality (CIoU by default) on positives, averaged per scale
  over all channels, then over scales.
- L_box: 1 - CIoU(decoded box, GT box) over positives.
- L'_ori: wrapped distance between decoded orientation and GT orientation over
  positives whose *current* objectness exceeds tau. The filter itself carries
  no gradient.

Positive-only losses are averaged per scale over contributing matches and
then over the scales that contribute at least one match. All gradients are
taken w.r.t. the raw logits and come back in RawPrediction layout.

=== WHY A TOLERANCE THRESHOLD? ===
Early in training most positive channels still predict "nobody here". Their
orientation output is noise, and pulling it towards the label only teaches the
head to fit angles it has not yet learned to localise. Only matches whose
objectness already exceeds tau train the orientation channel:

    p = 0.10, tau = 0.2  ->  ignored (zero loss, zero gradient)
    p = 0.35, tau = 0.2  ->  trained

=== WHY A WRAPPED DISTANCE? ===
Angles live on a circle: 355 degrees and 5 degrees are 10 degrees apart, not
350. Every orientation penalty is measured along the shorter arc, so the
gradient always turns the prediction the short way round.

=== GRADIENT LAYOUT ===
Only a handful of channels are positive, so box and orientation gradients
are kept as sparse pieces (matched indices plus per-match rows) and only the
objectness field is dense. A full RawPrediction-shaped gradient is built once
per call, or on demand per component.

**Usage Examples:**
    weights, options = loss_settings_from_config(config["loss"])
    breakdown = total_loss(raw, gts, weights, grid, anchors, options)
    breakdown.total, breakdown.gradient
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from ..core.geometry import CIoUResult, ciou_with_grad
from ..core.models import ConfigError, NonFiniteLogitError
from ..data.models import AnnotatedInstance
from .assignment import AssignmentResult, Match, assign
from .embedding import (H, O, P, X, AnchorSet, GridSpec, RawPrediction,
                        box_jacobian, decode_channels, sigmoid)
from .factory import LossStrategyFactory
from .interface import IObjectnessTarget, IOrientationDistance

logger = logging.getLogger(__name__)

NORMALIZATIONS = ("per_scale_mean", "sum")


@dataclass(frozen=True)
class LossWeights:
    """alpha (objectness), beta (box), lam (orientation), tau (objectness filter)."""
    alpha: float = 0.7
    beta: float = 0.05
    lam: float = 0.05
    tau: float = 0.2

    def __post_init__(self):
        for name in ("alpha", "beta", "lam"):
            if getattr(self, name) < 0:
                raise ConfigError(f"loss weight {name} must be >= 0", key=f"loss.{name}")
        if not 0.0 <= self.tau < 1.0:
            raise ConfigError(f"tau must lie in [0, 1), got {self.tau}", key="loss.tau")


@dataclass(frozen=True)
class LossOptions:
    """
    Interpretation switches; names resolve through LossStrategyFactory.

    With `detach_objectness_target` the positive BCE target is treated as a
    constant: the reported loss is unchanged, but no gradient flows from the
    objectness term into the box logits.
    """
    orientation_distance: str = "squared"
    normalization: str = "per_scale_mean"
    objectness_iou: str = "ciou"
    detach_objectness_target: bool = False

    def __post_init__(self):
        if self.normalization not in NORMALIZATIONS:
            raise ConfigError(f"normalization must be one of {NORMALIZATIONS}",
                              key="loss.normalization")
        # fail fast on unknown strategy names
        LossStrategyFactory.create_distance(self.orientation_distance)
        LossStrategyFactory.create_objectness_target(self.objectness_iou)


def loss_settings_from_config(loss_config: Dict[str, Any]):
    """(LossWeights, LossOptions) from the `loss` config section."""
    weights = LossWeights(alpha=float(loss_config["alpha"]), beta=float(loss_config["beta"]),
                          lam=float(loss_config["lam"]), tau=float(loss_config["tau"]))
    options = LossOptions(orientation_distance=loss_config["orientation_distance"],
                          normalization=loss_config["normalization"],
                          objectness_iou=loss_config["objectness_iou"])
    return weights, options


@dataclass
class GradientPiece:
    """
    Values for fields [start, stop) of one scale.

    `index` None means every cell (values shaped like the scale minus its
    last axis, plus one field axis); otherwise `values` holds one row per
    indexed channel.
    """
    scale: int
    start: int
    stop: int
    values: np.ndarray
    index: Optional[tuple] = None


@dataclass
class ComponentLoss:
    value: float
    shapes: List[tuple]
    contributors: int = 0
    pieces: List[GradientPiece] = field(default_factory=list)

    def accumulate(self, into: RawPrediction, weight: float = 1.0) -> None:
        """Add weight * gradient into `into`; np.add.at keeps the order fixed."""
        for piece in self.pieces:
            target = into.scales[piece.scale]
            if piece.index is None:
                target[..., piece.start:piece.stop] += weight * piece.values
                continue
            for offset, column in enumerate(range(piece.start, piece.stop)):
                np.add.at(target[..., column], piece.index, weight * piece.values[:, offset])

    @property
    def gradient(self) -> RawPrediction:
        out = RawPrediction([np.zeros(shape) for shape in self.shapes])
        self.accumulate(out)
        return out


@dataclass
class LossBreakdown:
    """
    All loss components of one call plus the gradient of `total`.

    `component_gradients` builds the unweighted gradient of each component
    under the keys l_obj, l_box, l_ori.
    """
    l_obj: float
    l_box: float
    l_ori: float
    total: float
    gradient: RawPrediction
    components: Dict[str, ComponentLoss] = field(default_factory=dict)
    num_matches: int = 0
    orientation_contributors: int = 0
    max_positive_objectness: float = 0.0
    skipped_gts: List[int] = field(default_factory=list)

    @property
    def component_gradients(self) -> Dict[str, RawPrediction]:
        return {name: part.gradient for name, part in self.components.items()}

    def to_dict(self) -> Dict[str, float]:
        return {"l_obj": self.l_obj, "l_box": self.l_box, "l_ori": self.l_ori, "total": self.total}


@dataclass
class ScaleMatches:
    """Matches of one scale gathered into arrays, decoded and compared to their GTs."""
    scale: int
    index: tuple             # ([row,] gy, gx, anchor) index arrays into the scale tensor
    squashed: np.ndarray     # (N, 7)
    pred_boxes: np.ndarray   # (N, 4)
    jacobian: np.ndarray     # (N, 4) d box / d (t_x, t_y, t_w, t_h)
    target_boxes: np.ndarray
    target_orientation: np.ndarray
    overlap: CIoUResult

    @property
    def count(self) -> int:
        return self.squashed.shape[0]


@dataclass
class MatchIndex:
    """Logit-independent part of ScaleMatches; build once, decode every step."""
    scale: int
    index: tuple
    cells: np.ndarray        # (N, 2) of (gx, gy)
    anchor_wh: np.ndarray    # (N, 2)
    target_boxes: np.ndarray
    target_orientation: np.ndarray


def index_matches(matches: Sequence[Match], grid: GridSpec, anchors: AnchorSet,
                  images: Optional[Sequence[int]] = None) -> List[MatchIndex]:
    """
    Group matches by scale (scale order, match order).

    With `images`, match k belongs to batch row images[k] and the index
    addresses a prediction stacked along a leading batch axis.
    """
    out = []
    for scale in range(grid.num_scales):
        chosen = [k for k, m in enumerate(matches) if m.scale == scale]
        if not chosen:
            continue
        picked = [matches[k] for k in chosen]
        gx = np.array([m.cell[0] for m in picked], dtype=int)
        gy = np.array([m.cell[1] for m in picked], dtype=int)
        anchor = np.array([m.anchor for m in picked], dtype=int)
        if images is None:
            index = (gy, gx, anchor)
        else:
            index = (np.array([images[k] for k in chosen], dtype=int), gy, gx, anchor)
        out.append(MatchIndex(
            scale=scale,
            index=index,
            cells=np.stack([gx, gy], axis=1).astype(float),
            anchor_wh=anchors.as_array(scale)[anchor],
            target_boxes=np.array([[m.target.box.cx, m.target.box.cy, m.target.box.w,
                                    m.target.box.h] for m in picked], dtype=float),
            target_orientation=np.array([m.target.orientation for m in picked], dtype=float),
        ))
    return out


def decode_matches(raw: RawPrediction, indexes: Sequence[MatchIndex],
                   grid: GridSpec) -> List[ScaleMatches]:
    """Decode the indexed channels of `raw` and compare them to their targets."""
    out = []
    for item in indexes:
        stride = grid.strides[item.scale]
        squashed, pred_boxes = decode_channels(raw.scales[item.scale][item.index], item.cells,
                                               stride, item.anchor_wh)
        out.append(ScaleMatches(
            scale=item.scale,
            index=item.index,
            squashed=squashed,
            pred_boxes=pred_boxes,
            jacobian=box_jacobian(squashed, stride, item.anchor_wh),
            target_boxes=item.target_boxes,
            target_orientation=item.target_orientation,
            overlap=ciou_with_grad(pred_boxes, item.target_boxes),
        ))
    return out


def gather_matches(raw: RawPrediction, matches: Sequence[Match], grid: GridSpec,
                   anchors: AnchorSet) -> List[ScaleMatches]:
    """Group matches by scale and decode their channels (scale order, match order)."""
    return decode_matches(raw, index_matches(matches, grid, anchors), grid)


def _shapes(like: RawPrediction) -> List[tuple]:
    return [a.shape for a in like.scales]


def orientation_loss(groups: Sequence[ScaleMatches], grid_like: RawPrediction, tau: float,
                     distance: Optional[IOrientationDistance] = None,
                     normalization: str = "per_scale_mean") -> ComponentLoss:
    """
    Filtered wrapped orientation loss.

    Matches with objectness <= tau contribute exactly zero loss and zero
    gradient; objectness is read as a constant (no gradient through the filter).
    """
    distance = distance or LossStrategyFactory.create_distance("squared")
    partials = []
    contributors = 0
    for group in groups:
        keep = group.squashed[:, P] > tau
        count = int(keep.sum())
        if count == 0:
            continue
        contributors += count
        pred = group.squashed[keep, O]
        value, d_pred = distance.value_and_grad(pred, group.target_orientation[keep])
        scale_norm = 1.0 / count if normalization == "per_scale_mean" else 1.0
        d_logit = d_pred * pred * (1.0 - pred) * scale_norm
        partials.append((group, keep, float(np.sum(value)) * scale_norm, d_logit))

    result = ComponentLoss(0.0, _shapes(grid_like), contributors)
    if not partials:
        return result
    outer = 1.0 / len(partials) if normalization == "per_scale_mean" else 1.0
    for group, keep, partial, d_logit in partials:
        result.value += partial * outer
        rows = np.zeros((group.count, 1))
        rows[keep, 0] = d_logit * outer
        result.pieces.append(GradientPiece(group.scale, O, O + 1, rows, group.index))
    return result


def box_loss(groups: Sequence[ScaleMatches], grid_like: RawPrediction) -> ComponentLoss:
    """Mean (1 - CIoU) per scale, averaged over scales with matches."""
    result = ComponentLoss(0.0, _shapes(grid_like), sum(g.count for g in groups))
    if not groups:
        return result
    outer = 1.0 / len(groups)
    for group in groups:
        result.value += float(np.mean(1.0 - group.overlap.ciou)) * outer
        d_box = -group.overlap.ciou_grad * (outer / group.count)
        result.pieces.append(GradientPiece(group.scale, X, H + 1, d_box * group.jacobian,
                                           group.index))
    return result


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def objectness_loss(raw: RawPrediction, groups: Sequence[ScaleMatches],
                    target_strategy: Optional[IObjectnessTarget] = None,
                    detach_target: bool = False) -> ComponentLoss:
    """
    BCE over every channel; positives target clamp(quality, 0, 1).

    BCE(sigmoid(z), t) = softplus(z) - t * z, so dBCE/dz = sigmoid(z) - t and
    dBCE/dt = -z; the latter flows into the box logits through the quality
    unless `detach_target` is set.
    """
    target_strategy = target_strategy or LossStrategyFactory.create_objectness_target("ciou")
    by_scale = {g.scale: g for g in groups}
    num_scales = len(raw.scales)
    result = ComponentLoss(0.0, _shapes(raw), sum(g.count for g in groups))
    for scale, logits in enumerate(raw.scales):
        z = logits[..., P]
        targets = np.zeros_like(z)
        group = by_scale.get(scale)
        if group is not None:
            quality, d_quality = target_strategy.quality(group.overlap)
            targets[group.index] = np.clip(quality, 0.0, 1.0)
        norm = 1.0 / (z.size * num_scales)
        result.value += float(np.sum(_softplus(z) - targets * z)) * norm
        result.pieces.append(GradientPiece(scale, P, P + 1,
                                           ((sigmoid(z) - targets) * norm)[..., None]))
        if group is not None and not detach_target:
            inside = ((quality > 0.0) & (quality < 1.0)).astype(float)
            d_target = -z[group.index] * norm * inside
            result.pieces.append(GradientPiece(scale, X, H + 1,
                                               d_target[:, None] * d_quality * group.jacobian,
                                               group.index))
    return result


def _breakdown(raw: RawPrediction, groups: Sequence[ScaleMatches], weights: LossWeights,
               options: LossOptions, num_matches: int, skipped: Sequence[int]) -> LossBreakdown:
    obj = objectness_loss(raw, groups,
                          LossStrategyFactory.create_objectness_target(options.objectness_iou),
                          options.detach_objectness_target)
    box = box_loss(groups, raw)
    ori = orientation_loss(groups, raw, weights.tau,
                           LossStrategyFactory.create_distance(options.orientation_distance),
                           options.normalization)
    gradient = RawPrediction([np.zeros(shape) for shape in _shapes(raw)])
    for part, weight in ((obj, weights.alpha), (box, weights.beta), (ori, weights.lam)):
        if weight != 0.0:
            part.accumulate(gradient, weight)
    total = weights.alpha * obj.value + weights.beta * box.value + weights.lam * ori.value
    return LossBreakdown(
        l_obj=obj.value, l_box=box.value, l_ori=ori.value, total=total,
        gradient=gradient,
        components={"l_obj": obj, "l_box": box, "l_ori": ori},
        num_matches=num_matches,
        orientation_contributors=ori.contributors,
        max_positive_objectness=max((float(g.squashed[:, P].max()) for g in groups),
                                    default=0.0),
        skipped_gts=list(skipped),
    )


def total_loss(raw: RawPrediction, gts: Sequence[AnnotatedInstance], weights: LossWeights,
               grid: GridSpec, anchors: AnchorSet, options: Optional[LossOptions] = None,
               assignment: Optional[AssignmentResult] = None,
               ratio_threshold: float = 4.0, neighbor_cells: bool = True) -> LossBreakdown:
    """
    assign -> decode -> three losses -> weighted sum, with the gradient of the sum.

    A precomputed `assignment` may be passed in when the same GTs are used
    repeatedly (assignment never depends on the logits); otherwise
    `ratio_threshold` and `neighbor_cells` drive assign().
    """
    options = options or LossOptions()
    raw.validate(grid)
    if assignment is None:
        assignment = assign(gts, grid, anchors, ratio_threshold=ratio_threshold,
                            neighbor_cells=neighbor_cells)
    groups = gather_matches(raw, assignment.matches, grid, anchors)
    return _breakdown(raw, groups, weights, options, len(assignment.matches), assignment.skipped)


def stack_predictions(raws: Sequence[RawPrediction]) -> RawPrediction:
    """Stack per-image predictions along a new leading batch axis."""
    return RawPrediction([np.stack([r.scales[s] for r in raws])
                          for s in range(len(raws[0].scales))])


def batch_index(assignments: Sequence[AssignmentResult], grid: GridSpec,
                anchors: AnchorSet) -> List[MatchIndex]:
    """MatchIndex of a whole batch; batch row i holds the matches of assignments[i]."""
    matches: List[Match] = []
    images: List[int] = []
    for row, assignment in enumerate(assignments):
        matches.extend(assignment.matches)
        images.extend([row] * len(assignment.matches))
    return index_matches(matches, grid, anchors, images)


def batch_loss(raw: RawPrediction, gts_per_image: Sequence[Sequence[AnnotatedInstance]],
               weights: LossWeights, grid: GridSpec, anchors: AnchorSet,
               options: Optional[LossOptions] = None,
               assignments: Optional[Sequence[AssignmentResult]] = None,
               index: Optional[Sequence[MatchIndex]] = None,
               ratio_threshold: float = 4.0, neighbor_cells: bool = True) -> LossBreakdown:
    """
    Loss of a batch stacked along a leading axis (see stack_predictions).

    Objectness is averaged over every channel of the batch; the positive-only
    losses are averaged per scale over the matches of the whole batch. A batch
    of one equals total_loss on that image. `index` (from batch_index) skips
    re-grouping the matches when the same batch is evaluated repeatedly.
    """
    options = options or LossOptions()
    batch = len(gts_per_image)
    for s, array in enumerate(raw.scales):
        expected = (batch,) + grid.scale_shape(s)
        if array.shape != expected:
            raise ValueError(f"scale {s}: expected batched shape {expected}, got {array.shape}")
        if not np.all(np.isfinite(array)):
            raise NonFiniteLogitError(f"scale {s} contains non-finite logits")
    if assignments is None:
        assignments = [assign(gts, grid, anchors, ratio_threshold=ratio_threshold,
                              neighbor_cells=neighbor_cells) for gts in gts_per_image]
    if index is None:
        index = batch_index(assignments, grid, anchors)
    groups = decode_matches(raw, index, grid)
    skipped = [g for a in assignments for g in a.skipped]
    return _breakdown(raw, groups, weights, options,
                      sum(len(a.matches) for a in assignments), skipped)


def near_nonsmooth(raw: RawPrediction, gts: Sequence[AnnotatedInstance], weights: LossWeights,
                   grid: GridSpec, anchors: AnchorSet, options: Optional[LossOptions] = None,
                   margin: float = 1e-5, edge_margin: float = 0.05,
                   assignment: Optional[AssignmentResult] = None,
                   ratio_threshold: float = 4.0, neighbor_cells: bool = True) -> bool:
    """
    True when `raw` sits close enough to a non-differentiable point of the
    total loss that central differences would straddle it: the tau filter,
    the wrapped-distance branch switch, the BCE-target clamp, or coincident
    box edges (`edge_margin` is in pixels).
    """
    options = options or LossOptions()
    distance = LossStrategyFactory.create_distance(options.orientation_distance)
    target_strategy = LossStrategyFactory.create_objectness_target(options.objectness_iou)
    if assignment is None:
        assignment = assign(gts, grid, anchors, ratio_threshold=ratio_threshold,
                            neighbor_cells=neighbor_cells)
    for group in gather_matches(raw, assignment.matches, grid, anchors):
        objectness = group.squashed[:, P]
        if np.any(np.abs(objectness - weights.tau) < margin):
            return True
        if np.any(distance.near_kink(group.squashed[:, O], group.target_orientation, margin)):
            return True
        if np.any(target_strategy.near_kink(group.overlap, margin)):
            return True
        pred = group.pred_boxes
        target = group.target_boxes
        p_lo, p_hi = pred[:, 0:2] - pred[:, 2:4] / 2, pred[:, 0:2] + pred[:, 2:4] / 2
        t_lo, t_hi = target[:, 0:2] - target[:, 2:4] / 2, target[:, 0:2] + target[:, 2:4] / 2
        gaps = np.concatenate([p_lo - t_lo, p_hi - t_hi, p_hi - t_lo, t_hi - p_lo], axis=1)
        if np.any(np.abs(gaps) < edge_margin):
            return True
    return False


__all__ = [
    "LossWeights", "LossOptions", "LossBreakdown", "ComponentLoss", "GradientPiece",
    "ScaleMatches", "loss_settings_from_config", "gather_matches", "orientation_loss",
    "box_loss", "MatchIndex", "index_matches", "decode_matches", "objectness_loss",
    "total_loss", "stack_predictions", "batch_index", "batch_loss", "near_nonsmooth",
]
