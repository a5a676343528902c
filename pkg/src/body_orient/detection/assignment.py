"""
Positive-sample assignment.

Each ground truth is offered to every scale. An anchor qualifies when both
size ratios max(gt/anchor, anchor/gt) stay below `ratio_threshold`; a
qualifying anchor claims the GT's own cell plus the nearest horizontal and
vertical neighbour (left/up when the center sits in the lower half of the
cell, right/down when in the upper half, none on an axis at exactly one
half). A channel claimed by two GTs goes to the GT whose box overlaps the
anchor-sized box at that cell most, then to the lower GT index.

=== WHY NEIGHBOUR CELLS? ===
The box center offset decodes as 2 * sigmoid(t) - 0.5, so a channel can
reach centers anywhere in (-0.5, 1.5) cells from its own corner. The nearest
neighbours can therefore represent the GT exactly as well, and claiming
them gives up to three positives per qualifying anchor:

    center at (4.3, 7.8) cells  ->  cells (4, 7), (3, 7) and (4, 8)

=== WHY A SIZE RATIO INSTEAD OF IoU? ===
Width and height decode as anchor * (2 * sigmoid(t)) ** 2, capped at four
times the anchor. A GT more than `ratio_threshold` times larger or smaller
than an anchor could not be represented by that channel at all.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

from ..core.geometry import iou
from ..core.models import Box2D
from ..data.models import AnnotatedInstance
from .embedding import (ANCHORS_PER_SCALE, AnchorSet, Cell, EncodedTarget,
                        GridSpec, encode_target, representable)

logger = logging.getLogger(__name__)

ChannelKey = Tuple[int, Cell, int]


@dataclass(frozen=True)
class Match:
    """One positive channel and the target it must reproduce."""
    gt_index: int
    scale: int
    cell: Cell  # (gx, gy)
    anchor: int
    target: EncodedTarget

    @property
    def channel(self) -> ChannelKey:
        return (self.scale, self.cell, self.anchor)


@dataclass
class AssignmentResult:
    matches: List[Match] = field(default_factory=list)
    skipped: List[int] = field(default_factory=list)  # GT indices with no channel


def _ratio_ok(box: Box2D, anchor_wh: Tuple[float, float], threshold: float) -> bool:
    rw = box.w / anchor_wh[0]
    rh = box.h / anchor_wh[1]
    return max(rw, 1.0 / rw) < threshold and max(rh, 1.0 / rh) < threshold


def candidate_cells(box: Box2D, scale: int, grid: GridSpec, neighbor_cells: bool = True) -> List[Cell]:
    """Home cell first, then the horizontal and vertical neighbours."""
    stride = grid.strides[scale]
    grid_w, grid_h = grid.grid_dims(scale)
    fx = box.cx / stride
    fy = box.cy / stride
    gx = min(int(math.floor(fx)), grid_w - 1)
    gy = min(int(math.floor(fy)), grid_h - 1)
    cells = [(gx, gy)]
    if not neighbor_cells:
        return cells
    frac_x = fx - gx
    frac_y = fy - gy
    if frac_x < 0.5 and gx - 1 >= 0:
        cells.append((gx - 1, gy))
    elif frac_x > 0.5 and gx + 1 < grid_w:
        cells.append((gx + 1, gy))
    if frac_y < 0.5 and gy - 1 >= 0:
        cells.append((gx, gy - 1))
    elif frac_y > 0.5 and gy + 1 < grid_h:
        cells.append((gx, gy + 1))
    return cells


def assign(gts: Sequence[AnnotatedInstance], grid: GridSpec, anchors: AnchorSet,
           ratio_threshold: float = 4.0, neighbor_cells: bool = True) -> AssignmentResult:
    """
    Assign ground truths to positive (scale, cell, anchor) channels.

    Output is sorted by GT index, then scale, cell, anchor. GTs that end up
    with no channel are listed in `skipped` instead of raising.

    Raises:
        ValueError: a GT center lies outside the input frame
    """
    width, height = grid.input_size
    claims: Dict[ChannelKey, Tuple[float, int]] = {}

    for gt_index, gt in enumerate(gts):
        if not (0.0 <= gt.box.cx < width and 0.0 <= gt.box.cy < height):
            raise ValueError(f"gt {gt.key} center ({gt.box.cx}, {gt.box.cy}) lies outside "
                             f"the {width}x{height} input")
        for scale in range(grid.num_scales):
            stride = grid.strides[scale]
            cells = candidate_cells(gt.box, scale, grid, neighbor_cells)
            for anchor in range(ANCHORS_PER_SCALE):
                anchor_wh = anchors.shape(scale, anchor)
                if not _ratio_ok(gt.box, anchor_wh, ratio_threshold):
                    continue
                for cell in cells:
                    if not representable(gt.box, scale, cell, anchor, grid, anchors):
                        logger.debug(f"gt {gt_index} not representable at {scale}/{cell}/{anchor}")
                        continue
                    anchor_box = Box2D((cell[0] + 0.5) * stride, (cell[1] + 0.5) * stride, *anchor_wh)
                    overlap = iou(gt.box, anchor_box)
                    key = (scale, cell, anchor)
                    current = claims.get(key)
                    # strict '>' keeps the lower GT index on ties
                    if current is None or overlap > current[0]:
                        claims[key] = (overlap, gt_index)

    matches = [
        Match(gt_index=gt_index, scale=scale, cell=cell, anchor=anchor,
              target=encode_target(gts[gt_index], scale, cell, anchor, grid, anchors))
        for (scale, cell, anchor), (_, gt_index) in claims.items()
    ]
    matches.sort(key=lambda m: (m.gt_index, m.scale, m.cell, m.anchor))

    claimed = {m.gt_index for m in matches}
    skipped = [i for i in range(len(gts)) if i not in claimed]
    if skipped:
        logger.warning(f"{len(skipped)} ground truth(s) matched no anchor channel: {skipped}")
    return AssignmentResult(matches=matches, skipped=skipped)
