"""
Tests for annotation ingestion, label files and dataset reconstruction.

Uses the small files under fixtures/: two images with five persons (and one
dog), three strong orientation labels and two weak ones.
"""

import json
from pathlib import Path

import pytest

from body_orient.core.models import (AngleRangeError, Box2D, DatasetFormatError,
                                     LabelConflictError, UncoveredInstanceError)
from body_orient.data.dataset import (convert_native_labels, format_orientation_labels,
                                      load_merged_gts, load_orientation_labels,
                                      load_person_annotations, parse_orientation_labels,
                                      reconstruct, write_merged)
from body_orient.data.models import InstanceSource

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def persons():
    return load_person_annotations(FIXTURES / "persons.json")


@pytest.fixture
def labels():
    return load_orientation_labels(FIXTURES / "orientation_labels.json")


@pytest.fixture
def weak_labels():
    return load_orientation_labels(FIXTURES / "weak_labels.json")


def _write(tmp_path, name, document):
    path = tmp_path / name
    path.write_text(document if isinstance(document, str) else json.dumps(document),
                    encoding="utf-8")
    return path


def _annotation_file(tmp_path, annotations, categories=None):
    return _write(tmp_path, "ann.json", {
        "images": [{"id": 1, "width": 640, "height": 480}],
        "annotations": annotations,
        "categories": categories if categories is not None else [{"id": 1, "name": "person"}],
    })


class TestLoadPersons:
    """load_person_annotations()"""

    def test_fixture(self, persons):
        assert sorted(persons.instances) == [(1, 101), (1, 102), (1, 103), (2, 201), (2, 202)]
        assert persons.instances[(1, 101)].box == Box2D.from_xywh(40, 60, 80, 200)
        assert set(persons.images) == {1, 2}
        assert persons.unknown_categories == 0

    def test_crowd_excluded(self, tmp_path):
        path = _annotation_file(tmp_path, [
            {"id": 1, "image_id": 1, "category_id": 1, "bbox": [0, 0, 10, 10], "iscrowd": 1},
            {"id": 2, "image_id": 1, "category_id": 1, "bbox": [0, 0, 10, 10]},
        ])
        result = load_person_annotations(path)
        assert list(result.instances) == [(1, 2)]
        assert result.crowd == 1

    def test_box_clipped_to_image(self, tmp_path):
        path = _annotation_file(tmp_path, [
            {"id": 1, "image_id": 1, "category_id": 1, "bbox": [600, 10, 100, 50]},
        ])
        result = load_person_annotations(path)
        assert result.clipped == 1
        assert result.instances[(1, 1)].box.to_corners() == (600.0, 10.0, 640.0, 60.0)

    def test_unknown_category_counted(self, tmp_path):
        path = _annotation_file(tmp_path, [
            {"id": 1, "image_id": 1, "category_id": 99, "bbox": [0, 0, 10, 10]},
        ])
        result = load_person_annotations(path)
        assert result.instances == {}
        assert result.unknown_categories == 1

    def test_unknown_image_rejected(self, tmp_path):
        path = _annotation_file(tmp_path, [
            {"id": 1, "image_id": 7, "category_id": 1, "bbox": [0, 0, 10, 10]},
        ])
        with pytest.raises(DatasetFormatError):
            load_person_annotations(path)

    def test_bad_json_reports_offset(self, tmp_path):
        path = _write(tmp_path, "broken.json", '{"labels": [}')
        with pytest.raises(DatasetFormatError) as exc:
            load_person_annotations(path)
        assert exc.value.offset == 12

    def test_missing_array(self, tmp_path):
        with pytest.raises(DatasetFormatError):
            load_person_annotations(_write(tmp_path, "x.json", {"images": []}))


class TestLabels:
    """Orientation label files"""

    def test_fixture(self, labels):
        assert labels == {(1, 101): 90.0, (1, 102): 180.0, (2, 201): 355.0}

    def test_360_folds_to_zero(self):
        labels = parse_orientation_labels(
            {"labels": [{"image_id": 1, "annotation_id": 1, "orientation": 360}]})
        assert labels[(1, 1)] == 0.0

    def test_out_of_range(self):
        with pytest.raises(AngleRangeError):
            parse_orientation_labels(
                {"labels": [{"image_id": 1, "annotation_id": 1, "orientation": 361}]})

    def test_duplicate_label(self):
        record = {"image_id": 1, "annotation_id": 1, "orientation": 10}
        with pytest.raises(LabelConflictError):
            parse_orientation_labels({"labels": [record, dict(record, orientation=20)]})

    def test_malformed_record(self):
        with pytest.raises(DatasetFormatError):
            parse_orientation_labels({"labels": [{"image_id": 1}]})

    def test_native_layout(self):
        labels = convert_native_labels(FIXTURES / "native_labels.json")
        assert labels == {(1, 101): 90.0, (1, 102): 180.0, (2, 201): 0.0}

    def test_native_bad_key(self, tmp_path):
        with pytest.raises(DatasetFormatError):
            convert_native_labels(_write(tmp_path, "n.json", {"1-101": 90}))

    def test_format_sorted(self):
        text = format_orientation_labels({(2, 1): 5.0, (1, 9): 7.123456})
        records = json.loads(text)["labels"]
        assert [(r["image_id"], r["annotation_id"]) for r in records] == [(1, 9), (2, 1)]
        assert records[0]["orientation"] == 7.1235


class TestReconstruct:
    """reconstruct()"""

    def test_strong_labels_cover_two_images(self, persons, labels):
        result = reconstruct(persons, labels, permit_missing=True)
        assert result.stats.images == 2
        assert result.stats.instances == 3
        assert result.stats.dropped == 2

    def test_restores_weakly_labelled_persons(self, persons, labels, weak_labels):
        result = reconstruct(persons, labels, weak_labels)
        stats = result.stats
        assert (stats.images, stats.instances, stats.strong, stats.weak) == (2, 5, 3, 2)
        restored = [inst for inst in result.instances if inst.weak]
        assert {inst.key for inst in restored} == {(1, 103), (2, 202)}
        assert all(inst.source is InstanceSource.RESTORED for inst in restored)

    def test_missing_weak_labels_raise(self, persons, labels):
        with pytest.raises(UncoveredInstanceError) as exc:
            reconstruct(persons, labels)
        assert exc.value.missing == [(1, 103), (2, 202)]

    def test_strong_label_wins(self, persons, labels, weak_labels):
        weak = dict(weak_labels)
        weak[(1, 101)] = 10.0
        result = reconstruct(persons, labels, weak)
        inst = next(i for i in result.instances if i.key == (1, 101))
        assert inst.orientation == 90.0
        assert not inst.weak

    def test_image_without_strong_label_dropped(self, persons, weak_labels):
        result = reconstruct(persons, {(1, 101): 0.0}, weak_labels, permit_missing=True)
        assert [image["id"] for image in result.images] == [1]
        assert {inst.image_id for inst in result.instances} == {1}

    def test_orphan_labels_counted(self, persons, labels, weak_labels):
        result = reconstruct(persons, {**labels, (9, 9): 12.0}, weak_labels)
        assert result.stats.extras["orphan_labels"] == 1


class TestMergedFile:
    """write_merged() and load_merged_gts()"""

    def test_deterministic_bytes(self, tmp_path, persons, labels, weak_labels):
        first, second = tmp_path / "a.json", tmp_path / "b.json"
        write_merged(reconstruct(persons, labels, weak_labels), first)
        write_merged(reconstruct(persons, labels, weak_labels), second)
        assert first.read_bytes() == second.read_bytes()

    def test_load_back(self, tmp_path, persons, labels, weak_labels):
        path = tmp_path / "merged.json"
        dataset = reconstruct(persons, labels, weak_labels)
        write_merged(dataset, path)
        gts = load_merged_gts(path)
        assert gts == dataset.instances

    def test_plain_file_is_unlabelled(self):
        gts = load_merged_gts(FIXTURES / "persons.json")
        assert len(gts) == 5
        assert all(g.orientation is None and not g.weak for g in gts)


class TestMalformedRecords:
    """Records of the wrong JSON type surface as DatasetFormatError"""

    @pytest.mark.parametrize("annotations", [
        ["not an object"],
        [[1, 1, 1, [0, 0, 10, 10]]],
        [None],
    ])
    def test_annotation_not_an_object(self, tmp_path, annotations):
        with pytest.raises(DatasetFormatError) as exc:
            load_person_annotations(_annotation_file(tmp_path, annotations))
        assert "annotation #0" in str(exc.value)

    @pytest.mark.parametrize("categories", [
        ["person"],
        [{"name": "person"}],
        [{"id": "1", "name": "person"}],
    ])
    def test_bad_category(self, tmp_path, categories):
        with pytest.raises(DatasetFormatError):
            load_person_annotations(_annotation_file(tmp_path, [], categories))

    def test_mixed_id_types(self, tmp_path):
        path = _annotation_file(tmp_path, [
            {"id": 1, "image_id": 1, "category_id": 1, "bbox": [0, 0, 10, 10]},
            {"id": "two", "image_id": 1, "category_id": 1, "bbox": [0, 0, 10, 10]},
        ])
        with pytest.raises(DatasetFormatError):
            load_person_annotations(path)

    def test_image_not_an_object(self, tmp_path):
        path = _write(tmp_path, "ann.json", {"images": [7], "annotations": []})
        with pytest.raises(DatasetFormatError):
            load_person_annotations(path)

    def test_merged_gts_reject_non_objects(self, tmp_path):
        path = _write(tmp_path, "gt.json", {"annotations": ["x"], "categories": []})
        with pytest.raises(DatasetFormatError):
            load_merged_gts(path)
        path = _write(tmp_path, "gt2.json", {"annotations": [], "categories": [3]})
        with pytest.raises(DatasetFormatError):
            load_merged_gts(path)

    def test_offset_is_in_bytes(self, tmp_path):
        path = _write(tmp_path, "broken.json", '{"note": "日本", "labels": [}')
        with pytest.raises(DatasetFormatError) as exc:
            load_orientation_labels(path)
        # two 3-byte characters before the failing position
        assert exc.value.offset == len('{"note": "日本", "labels": [') + 4
