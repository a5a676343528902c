"""
Tests for the letterbox transform.
"""

import numpy as np
import pytest

from body_orient.core.models import Box2D
from body_orient.data.letterbox import Letterbox, letterbox_transform
from body_orient.data.models import AnnotatedInstance


class TestLetterbox:
    """Letterbox"""

    def test_square_image_has_no_padding(self):
        letterbox = Letterbox(512, 512)
        assert letterbox.scale == 2.0
        assert letterbox.pad == (0.0, 0.0)
        assert letterbox.forward(Box2D(10, 20, 4, 8)) == Box2D(20, 40, 8, 16)

    def test_wide_image_padded_vertically(self):
        letterbox = Letterbox(2048, 1024)
        assert letterbox.scale == 0.5
        assert letterbox.pad == (0.0, 256.0)
        assert letterbox.forward(Box2D(1024, 512, 200, 100)) == Box2D(512, 512, 100, 50)

    def test_tall_image_padded_horizontally(self):
        letterbox = Letterbox(320, 640, target=(640, 640))
        assert letterbox.pad == (160.0, 0.0)

    def test_round_trip(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            letterbox = Letterbox(*rng.uniform(50, 3000, 2))
            box = Box2D(*rng.uniform(0, 1000, 2), *rng.uniform(1, 500, 2))
            back = letterbox.inverse(letterbox.forward(box))
            for got, want in zip((back.cx, back.cy, back.w, back.h), (box.cx, box.cy, box.w, box.h)):
                assert got == pytest.approx(want, rel=1e-9, abs=1e-9)

    def test_rejects_bad_dims(self):
        with pytest.raises(ValueError):
            Letterbox(0, 100)
        with pytest.raises(ValueError):
            Letterbox(100, 100, target=(0, 10))

    def test_transform_instances(self):
        inst = AnnotatedInstance(image_id=3, annotation_id=1, box=Box2D(1024, 512, 200, 100),
                                 orientation=30.0)
        moved, letterbox = letterbox_transform([inst], 2048, 1024)
        assert moved[0].box == Box2D(512, 512, 100, 50)
        assert moved[0].orientation == 30.0
        assert letterbox.inverse(moved[0].box) == inst.box
