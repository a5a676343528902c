"""
Tests for the JSON Lines prediction format.
"""

import json

import pytest

from body_orient.core.models import Box2D, DatasetFormatError
from body_orient.data.formats import (format_predictions, parse_predictions, read_predictions,
                                      write_predictions)
from body_orient.detection.postprocess import Detection


def _det(cx, score, image_id=1, orientation=45.0):
    return Detection(box=Box2D(cx, 50.0, 10.0, 20.0), score=score, orientation=orientation,
                     image_id=image_id)


class TestFormat:
    """format_predictions()"""

    def test_sorted_by_image_then_score(self):
        text = format_predictions([_det(10, 0.3, 2), _det(20, 0.9, 1), _det(30, 0.5, 1)])
        records = [json.loads(line) for line in text.splitlines()]
        assert [(r["image_id"], r["score"]) for r in records] == [(1, 0.9), (1, 0.5), (2, 0.3)]

    def test_coordinates_rounded_score_exact(self):
        text = format_predictions([Detection(box=Box2D(1 / 3, 2 / 3, 1.0, 1.0), score=0.1234567891,
                                             orientation=123.45678912)])
        record = json.loads(text)
        assert record["score"] == 0.1234567891
        assert record["orientation"] == 123.456789
        assert record["x1"] == round(1 / 3 - 0.5, 6)

    def test_order_independent_bytes(self):
        dets = [_det(10, 0.3), _det(20, 0.9), _det(30, 0.5, 2)]
        assert format_predictions(dets) == format_predictions(list(reversed(dets)))

    def test_empty(self):
        assert format_predictions([]) == ""


class TestParse:
    """parse_predictions() and read_predictions()"""

    def test_reads_back(self, tmp_path):
        path = tmp_path / "preds.jsonl"
        write_predictions([_det(10, 0.75, 3, 270.0)], path)
        (det,) = read_predictions(path)
        assert det.image_id == 3
        assert det.score == 0.75
        assert det.orientation == 270.0
        assert det.box == Box2D(10.0, 50.0, 10.0, 20.0)

    def test_blank_lines_ignored(self):
        line = format_predictions([_det(10, 0.5)])
        assert len(parse_predictions("\n" + line + "\n\n")) == 1

    def test_orientation_360_folds(self):
        line = '{"image_id": 1, "x1": 0, "y1": 0, "x2": 1, "y2": 1, "score": 0.5, "orientation": 360}'
        assert parse_predictions(line)[0].orientation == 0.0

    def test_bad_json_offset(self):
        good = format_predictions([_det(10, 0.5)])
        with pytest.raises(DatasetFormatError) as exc:
            parse_predictions(good + "{oops}\n")
        assert exc.value.offset == len(good) + 1

    def test_missing_key(self):
        with pytest.raises(DatasetFormatError) as exc:
            parse_predictions('{"image_id": 1}\n')
        assert exc.value.offset == 0
        assert "lacks keys" in str(exc.value)

    def test_not_an_object(self):
        with pytest.raises(DatasetFormatError):
            parse_predictions("[1, 2]\n")

    def test_invalid_detection(self):
        line = '{"image_id": 1, "x1": 0, "y1": 0, "x2": 1, "y2": 1, "score": 0, "orientation": 10}'
        with pytest.raises(DatasetFormatError):
            parse_predictions(line)

    def test_tiny_score_reads_back(self, tmp_path):
        path = tmp_path / "tiny.jsonl"
        write_predictions([_det(10, 3e-9), _det(20, 4.9e-7)], path)
        scores = sorted(d.score for d in read_predictions(path))
        assert scores == [3e-9, 4.9e-7]

    def test_offset_counts_bytes(self):
        label = ('{"image_id": 1, "x1": 0, "y1": 0, "x2": 1, "y2": 1, "score": 0.5,'
                 ' "orientation": 10, "note": "éé"}\n')
        with pytest.raises(DatasetFormatError) as exc:
            parse_predictions(label + "  {oops}\n")
        # each é takes two bytes; two spaces of indent precede the line
        assert exc.value.offset == len(label) + 2 + 2 + 1
