"""
Tests for positive-sample assignment.
"""

import itertools

import numpy as np
import pytest

from body_orient.core.models import Box2D
from body_orient.data.models import AnnotatedInstance
from body_orient.detection.assignment import _ratio_ok, assign, candidate_cells
from body_orient.detection.embedding import AnchorSet, GridSpec, default_grid, encode_target

SMALL_GRID = GridSpec(input_size=(256, 256), strides=(8, 16, 32, 64))


def _gt(cx, cy, w, h, index=1, orientation=45.0):
    return AnnotatedInstance(image_id=1, annotation_id=index, box=Box2D(cx, cy, w, h),
                             orientation=orientation)


def _one_anchor_set(w, h, others=(1000.0, 1000.0)):
    """Anchor (w, h) on scale 0 and unreachable anchors everywhere else."""
    tiny = [list(others)] * 3
    return AnchorSet.from_config([[[w, h]] + tiny[:2]] + [tiny] * 3)


class TestAssign:
    """assign()"""

    def test_anchor_sized_gt_claims_three_cells(self):
        anchors = _one_anchor_set(20, 40)
        # center in the lower-left quarter of cell (5, 5) -> neighbours left and up
        result = assign([_gt(5 * 8 + 2, 5 * 8 + 3, 20, 40)], SMALL_GRID, anchors)
        cells = sorted(m.cell for m in result.matches if m.scale == 0 and m.anchor == 0)
        assert cells == [(4, 5), (5, 4), (5, 5)]
        assert result.skipped == []

    def test_upper_half_picks_right_and_down(self):
        cells = candidate_cells(Box2D(5 * 8 + 6, 5 * 8 + 7, 10, 10), 0, SMALL_GRID)
        assert cells == [(5, 5), (6, 5), (5, 6)]

    def test_border_cell_has_no_outside_neighbour(self):
        cells = candidate_cells(Box2D(2, 2, 4, 4), 0, SMALL_GRID)
        assert cells == [(0, 0)]

    def test_oversized_gt_is_skipped(self):
        grid, anchors = default_grid()
        widest = max(w for scale in anchors.anchors for w, _ in scale)
        result = assign([_gt(512, 512, widest * 5, 400)], grid, anchors)
        assert result.matches == []
        assert result.skipped == [0]

    def test_two_far_gts_give_six_matches_by_enumeration(self):
        anchors = _one_anchor_set(16, 16)
        gts = [_gt(40 + 2, 40 + 2, 16, 16, 1), _gt(200 + 2, 200 + 2, 16, 16, 2)]
        result = assign(gts, SMALL_GRID, anchors)
        assert len(result.matches) == 6

        # brute force: every channel of scale 0 anchor 0 that satisfies the ratio rule,
        # the neighbour rule and representability
        expected = set()
        grid_w, grid_h = SMALL_GRID.grid_dims(0)
        for index, gt in enumerate(gts):
            if not _ratio_ok(gt.box, (16, 16), 4.0):
                continue
            home = (int(gt.box.cx // 8), int(gt.box.cy // 8))
            for gx, gy in itertools.product(range(grid_w), range(grid_h)):
                dx, dy = gx - home[0], gy - home[1]
                frac_x = gt.box.cx / 8 - home[0]
                frac_y = gt.box.cy / 8 - home[1]
                is_home = (dx, dy) == (0, 0)
                is_x_neighbour = dy == 0 and dx == (-1 if frac_x < 0.5 else 1)
                is_y_neighbour = dx == 0 and dy == (-1 if frac_y < 0.5 else 1)
                if is_home or is_x_neighbour or is_y_neighbour:
                    expected.add((index, (gx, gy)))
        assert {(m.gt_index, m.cell) for m in result.matches} == expected

    def test_channels_unique_and_representable(self):
        grid, anchors = default_grid()
        rng = np.random.default_rng(4)
        gts = [_gt(*rng.uniform(100, 900, 2), *rng.uniform(20, 400, 2), index=i)
               for i in range(12)]
        result = assign(gts, grid, anchors)
        channels = [m.channel for m in result.matches]
        assert len(channels) == len(set(channels))
        for m in result.matches:
            encode_target(gts[m.gt_index], m.scale, m.cell, m.anchor, grid, anchors)

    def test_sorted_and_deterministic(self):
        grid, anchors = default_grid()
        gts = [_gt(300, 300, 60, 150, 1), _gt(310, 305, 50, 140, 2), _gt(700, 200, 90, 200, 3)]
        first = assign(gts, grid, anchors)
        second = assign(gts, grid, anchors)
        assert first.matches == second.matches
        keys = [(m.gt_index, m.scale, m.cell, m.anchor) for m in first.matches]
        assert keys == sorted(keys)

    def test_conflict_goes_to_better_overlap(self):
        anchors = _one_anchor_set(16, 16)
        # both GTs share cell (5, 5); the anchor-shaped one overlaps the anchor box best
        good = _gt(44, 44, 16, 16, 1)
        poor = _gt(43, 43, 30, 10, 2)
        result = assign([poor, good], SMALL_GRID, anchors)
        owner = {m.cell: m.gt_index for m in result.matches if m.scale == 0}
        assert owner[(5, 5)] == 1

    def test_lower_ratio_threshold_never_adds_matches(self):
        grid, anchors = default_grid()
        rng = np.random.default_rng(8)
        gts = [_gt(*rng.uniform(100, 900, 2), *rng.uniform(20, 400, 2), index=i)
               for i in range(8)]
        loose = {m.channel for m in assign(gts, grid, anchors, ratio_threshold=4.0).matches}
        tight = {m.channel for m in assign(gts, grid, anchors, ratio_threshold=2.0).matches}
        assert tight <= loose

    def test_center_outside_frame_rejected(self):
        grid, anchors = default_grid()
        with pytest.raises(ValueError):
            assign([_gt(1030, 10, 20, 20)], grid, anchors)
