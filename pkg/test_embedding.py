"""
Tests for the unified embedding codec: grid geometry, decode, encode and inversion.
"""

import numpy as np
import pytest

from body_orient.core.models import (Box2D, ConfigError, NonFiniteLogitError,
                                     UnrepresentableTargetError)
from body_orient.data.models import AnnotatedInstance
from body_orient.detection.embedding import (O, AnchorSet, GridSpec, RawPrediction, decode,
                                             decode_scale, default_grid, encode_target, invert,
                                             representable, sigmoid)


@pytest.fixture
def grid_and_anchors():
    return default_grid()


def _single_anchor_prediction(grid, scale, cell, anchor, logits):
    raw = RawPrediction.zeros(grid)
    gx, gy = cell
    raw.scales[scale][gy, gx, anchor] = logits
    return raw


class TestGridSpec:
    """Grid geometry"""

    def test_prediction_count_1024(self, grid_and_anchors):
        grid, _ = grid_and_anchors
        assert grid.num_predictions() == 65_280

    def test_scale_shape(self, grid_and_anchors):
        grid, _ = grid_and_anchors
        assert grid.scale_shape(0) == (128, 128, 3, 7)
        assert grid.scale_shape(3) == (16, 16, 3, 7)

    def test_rectangular_input(self):
        grid = GridSpec(input_size=(128, 64), strides=(8, 16, 32, 64))
        assert grid.grid_dims(0) == (16, 8)
        assert grid.scale_shape(0) == (8, 16, 3, 7)

    def test_rejects_indivisible_input(self):
        with pytest.raises(ConfigError) as exc:
            GridSpec(input_size=(1000, 1024))
        assert exc.value.key == "grid.input_size"

    def test_rejects_wrong_scale_count(self):
        with pytest.raises(ConfigError):
            GridSpec(strides=(8, 16, 32))

    def test_rejects_bad_anchors(self):
        with pytest.raises(ConfigError):
            AnchorSet.from_config([[[1, 1], [2, 2]]] * 4)
        with pytest.raises(ConfigError):
            AnchorSet.from_config([[[1, 1], [2, 2], [0, 3]]] * 4)


class TestDecode:
    """decode() of a single channel"""

    def test_all_zero_logits(self):
        grid = GridSpec(input_size=(64, 64), strides=(8, 16, 32, 64))
        anchors = AnchorSet.from_config([[[16, 24], [8, 8], [8, 8]]] + [[[8, 8]] * 3] * 3)
        raw = RawPrediction.zeros(grid)
        emb = decode(raw, 0, (3, 4), 0, grid, anchors)
        assert emb.objectness == 0.5
        assert emb.box == Box2D(28.0, 36.0, 16.0, 24.0)
        assert emb.orientation == 0.5
        assert emb.degrees == 180.0

    def test_width_logit_zero_reproduces_anchor(self, grid_and_anchors):
        grid, anchors = grid_and_anchors
        for anchor in range(3):
            emb = decode(RawPrediction.zeros(grid), 2, (5, 5), anchor, grid, anchors)
            assert emb.box.w == anchors.shape(2, anchor)[0]
            assert emb.box.h == anchors.shape(2, anchor)[1]

    def test_orientation_monotone_and_open(self, grid_and_anchors):
        grid, anchors = grid_and_anchors
        previous = -1.0
        for value in np.linspace(-30, 30, 61):
            logits = np.zeros(7)
            logits[O] = value
            raw = _single_anchor_prediction(grid, 1, (2, 2), 1, logits)
            emb = decode(raw, 1, (2, 2), 1, grid, anchors)
            assert emb.orientation > previous
            assert 0.0 < emb.degrees < 360.0
            previous = emb.orientation

    def test_non_finite_rejected(self, grid_and_anchors):
        grid, anchors = grid_and_anchors
        logits = np.zeros(7)
        logits[2] = np.nan
        raw = _single_anchor_prediction(grid, 0, (1, 1), 0, logits)
        with pytest.raises(NonFiniteLogitError):
            decode(raw, 0, (1, 1), 0, grid, anchors)

    def test_vectorized_agrees(self, grid_and_anchors):
        grid = GridSpec(input_size=(128, 128), strides=(8, 16, 32, 64))
        _, anchors = grid_and_anchors
        raw = RawPrediction.random(grid, np.random.default_rng(0))
        decoded = decode_scale(raw.scales[1], 1, grid, anchors)
        emb = decode(raw, 1, (3, 5), 2, grid, anchors)
        assert np.allclose(decoded.boxes[5, 3, 2],
                           [emb.box.cx, emb.box.cy, emb.box.w, emb.box.h])
        assert decoded.orientation[5, 3, 2] == pytest.approx(emb.orientation)

    def test_centers_stay_near_cell(self, grid_and_anchors):
        grid = GridSpec(input_size=(128, 128), strides=(8, 16, 32, 64))
        _, anchors = grid_and_anchors
        raw = RawPrediction.random(grid, np.random.default_rng(1), std=5.0)
        decoded = decode_scale(raw.scales[0], 0, grid, anchors)
        gx = np.arange(16)[None, :, None]
        offset = decoded.boxes[..., 0] / 8.0 - gx
        assert np.all(offset > -0.5) and np.all(offset < 1.5)


class TestEncodeAndInvert:
    """encode_target() and invert()"""

    def _gt(self, box, orientation=90.0):
        return AnnotatedInstance(image_id=1, annotation_id=1, box=box, orientation=orientation)

    def test_orientation_normalized(self, grid_and_anchors):
        grid, anchors = grid_and_anchors
        box = Box2D(100.0, 100.0, 40.0, 90.0)
        target = encode_target(self._gt(box, 90.0), 2, (3, 3), 0, grid, anchors)
        assert target.orientation == 0.25
        assert target.objectness == 1.0
        assert encode_target(self._gt(box, 0.0), 2, (3, 3), 0, grid, anchors).orientation == 0.0

    def test_unrepresentable_rejected(self, grid_and_anchors):
        grid, anchors = grid_and_anchors
        far = self._gt(Box2D(500.0, 500.0, 40.0, 90.0))
        with pytest.raises(UnrepresentableTargetError):
            encode_target(far, 0, (0, 0), 0, grid, anchors)
        huge = self._gt(Box2D(100.0, 100.0, 900.0, 900.0))
        assert not representable(huge.box, 0, (12, 12), 0, grid, anchors)

    def test_invert_reproduces_box(self, grid_and_anchors):
        grid, anchors = grid_and_anchors
        rng = np.random.default_rng(21)
        checked = 0
        while checked < 50:
            scale = int(rng.integers(0, 4))
            anchor = int(rng.integers(0, 3))
            stride = grid.strides[scale]
            cell = (int(rng.integers(1, 10)), int(rng.integers(1, 10)))
            aw, ah = anchors.shape(scale, anchor)
            box = Box2D((cell[0] + rng.uniform(-0.4, 1.4)) * stride,
                        (cell[1] + rng.uniform(-0.4, 1.4)) * stride,
                        aw * rng.uniform(0.3, 3.5), ah * rng.uniform(0.3, 3.5))
            target = encode_target(self._gt(box, float(rng.uniform(0, 360))), scale, cell,
                                   anchor, grid, anchors)
            raw = _single_anchor_prediction(grid, scale, cell, anchor,
                                            invert(target, scale, cell, anchor, grid, anchors))
            emb = decode(raw, scale, cell, anchor, grid, anchors)
            for got, want in zip((emb.box.cx, emb.box.cy, emb.box.w, emb.box.h),
                                 (box.cx, box.cy, box.w, box.h)):
                assert got == pytest.approx(want, abs=1e-6)
            assert emb.orientation == pytest.approx(target.orientation, abs=1e-6)
            checked += 1

    def test_invert_objectness_logit(self, grid_and_anchors):
        grid, anchors = grid_and_anchors
        target = encode_target(self._gt(Box2D(100.0, 100.0, 40.0, 90.0)), 2, (3, 3), 0,
                               grid, anchors)
        logits = invert(target, 2, (3, 3), 0, grid, anchors, objectness_logit=4.0)
        assert logits[0] == 4.0
        assert float(sigmoid(logits[0])) == pytest.approx(1 / (1 + np.exp(-4.0)))
