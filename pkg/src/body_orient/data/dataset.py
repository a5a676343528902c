"""
Annotation ingestion and dataset reconstruction.

Inputs:
- detection-benchmark annotation file: {"images", "annotations", "categories"},
  boxes as [x, y, w, h] in original image pixels
- orientation label file and weak label file, both
  {"labels": [{"image_id", "annotation_id", "orientation"}, ...]}
- native orientation-benchmark labels: {"<image_id>_<annotation_id>": degrees}
  (see convert_native_labels)

reconstruct() keeps every image that has at least one orientation label and
restores the person instances on those images that the orientation benchmark
left out, attaching their weak labels. The merged result is written back in
the detection-benchmark layout with per-annotation `orientation`, `weak` and
`source` fields.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from ..core.angles import normalize_degrees
from ..core.models import (AngleRangeError, Box2D, DatasetFormatError, InvalidBoxError,
                           LabelConflictError, UncoveredInstanceError)
from .models import AnnotatedInstance, DatasetStats, InstanceSource

logger = logging.getLogger(__name__)

InstanceKey = Tuple[int, int]
OrientationLabels = Dict[InstanceKey, float]

PERSON_CATEGORY = "person"
ORIENTATION_DECIMALS = 4
BOX_DECIMALS = 4


@dataclass
class PersonAnnotations:
    """Person instances of one annotation file (orientation not yet attached)."""
    instances: Dict[InstanceKey, AnnotatedInstance] = field(default_factory=dict)
    images: Dict[int, Dict[str, Any]] = field(default_factory=dict)
    categories: List[Dict[str, Any]] = field(default_factory=list)
    unknown_categories: int = 0
    crowd: int = 0
    clipped: int = 0
    degenerate: int = 0


@dataclass
class ReconstructedDataset:
    instances: List[AnnotatedInstance]
    images: List[Dict[str, Any]]
    categories: List[Dict[str, Any]]
    stats: DatasetStats


def _read_json(path: Path) -> Any:
    """
    Raises:
        DatasetFormatError: not valid JSON; offset is the UTF-8 byte position
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path}: {exc.msg}",
                                 offset=len(text[:exc.pos].encode("utf-8"))) from exc


def _require_list(document: Any, key: str, path: Path) -> list:
    if not isinstance(document, dict) or not isinstance(document.get(key), list):
        raise DatasetFormatError(f"{path}: expected a top-level '{key}' array")
    return document[key]


def _require_records(items: list, what: str, path: Path) -> List[Dict[str, Any]]:
    """Every entry of an array must be a JSON object."""
    for position, item in enumerate(items):
        if not isinstance(item, dict):
            raise DatasetFormatError(f"{path}: {what} #{position} is not an object: {item!r}")
    return items


def _categories(document: Dict[str, Any], path: Path) -> List[Dict[str, Any]]:
    """Optional `categories` array; every entry needs an integer `id`."""
    categories = document.get("categories", [])
    if categories is None:
        return []
    if not isinstance(categories, list):
        raise DatasetFormatError(f"{path}: 'categories' must be an array")
    for category in _require_records(categories, "category", path):
        if not isinstance(category.get("id"), int) or isinstance(category.get("id"), bool):
            raise DatasetFormatError(f"{path}: category without an integer id: {category!r}")
    return categories


def _person_category_ids(categories: List[Dict[str, Any]]) -> set:
    named = {c["id"] for c in categories if c.get("name") == PERSON_CATEGORY}
    return named if named else {1}


def _clip(bbox, width: float, height: float) -> Tuple[float, float, float, float]:
    x, y, w, h = (float(v) for v in bbox)
    return (max(0.0, x), max(0.0, y), min(width, x + w), min(height, y + h))


def load_person_annotations(path: Path) -> PersonAnnotations:
    """
    Person-category instances of a detection-benchmark annotation file.

    Crowd regions are excluded, boxes are clipped to their image, and
    annotations with a category id missing from `categories` are skipped;
    each exclusion is counted and logged.

    Raises:
        DatasetFormatError: malformed JSON or layout
    """
    document = _read_json(path)
    images_raw = _require_records(_require_list(document, "images", path), "image", path)
    annotations = _require_records(_require_list(document, "annotations", path), "annotation",
                                   path)
    categories = _categories(document, path)
    try:
        annotations = sorted(annotations, key=lambda a: (a.get("image_id", 0), a.get("id", 0)))
    except TypeError as exc:
        raise DatasetFormatError(f"{path}: annotation ids must be numbers: {exc}") from exc

    result = PersonAnnotations(categories=sorted(categories, key=lambda c: c["id"]))
    try:
        for image in images_raw:
            result.images[int(image["id"])] = {"id": int(image["id"]),
                                               "width": float(image["width"]),
                                               "height": float(image["height"]),
                                               "file_name": image.get("file_name", "")}
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetFormatError(f"{path}: malformed image record: {exc}") from exc

    known = {c["id"] for c in categories}
    persons = _person_category_ids(categories)
    for ann in annotations:
        try:
            category = ann["category_id"]
            if known and category not in known:
                result.unknown_categories += 1
                continue
            if category not in persons:
                continue
            if ann.get("iscrowd", 0):
                result.crowd += 1
                continue
            image = result.images.get(int(ann["image_id"]))
            if image is None:
                raise DatasetFormatError(f"{path}: annotation {ann['id']} refers to unknown "
                                         f"image {ann['image_id']}")
            corners = _clip(ann["bbox"], image["width"], image["height"])
            x, y, w, h = (float(v) for v in ann["bbox"])
            if corners != (x, y, x + w, y + h):
                result.clipped += 1
            try:
                box = Box2D.from_corners(corners)
            except InvalidBoxError:
                result.degenerate += 1
                continue
            key = (int(ann["image_id"]), int(ann["id"]))
            if key in result.instances:
                raise DatasetFormatError(f"{path}: duplicate annotation id {key[1]}")
            result.instances[key] = AnnotatedInstance(image_id=key[0], annotation_id=key[1],
                                                      box=box)
        except DatasetFormatError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetFormatError(f"{path}: malformed annotation {ann!r}: {exc}") from exc

    if result.unknown_categories:
        logger.warning(f"{path}: skipped {result.unknown_categories} annotation(s) with "
                       f"unknown category ids")
    if result.crowd:
        logger.warning(f"{path}: excluded {result.crowd} crowd region(s)")
    if result.clipped:
        logger.warning(f"{path}: clipped {result.clipped} box(es) to their image")
    if result.degenerate:
        logger.warning(f"{path}: dropped {result.degenerate} box(es) with no area inside the image")
    logger.info(f"{path}: {len(result.instances)} person instance(s) on "
                f"{len(result.images)} image(s)")
    return result


def parse_orientation_labels(document: Any, source: str = "<labels>") -> OrientationLabels:
    """
    Raises:
        DatasetFormatError: wrong layout
        LabelConflictError: the same (image, annotation) labelled twice
        AngleRangeError: angle outside [0, 360]
    """
    records = _require_list(document, "labels", Path(source))
    labels: OrientationLabels = {}
    for record in records:
        try:
            key = (int(record["image_id"]), int(record["annotation_id"]))
            raw_angle = float(record["orientation"])
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetFormatError(f"{source}: malformed label {record!r}: {exc}") from exc
        if key in labels:
            raise LabelConflictError(f"{source}: duplicate label for image {key[0]} "
                                     f"annotation {key[1]}")
        try:
            labels[key] = normalize_degrees(raw_angle)
        except AngleRangeError as exc:
            raise AngleRangeError(f"{source}: label for image {key[0]} annotation {key[1]}: "
                                  f"{exc}") from exc
    return labels


def load_orientation_labels(path: Path) -> OrientationLabels:
    """(image_id, annotation_id) -> degrees in [0, 360); 360 folds to 0."""
    labels = parse_orientation_labels(_read_json(path), str(path))
    logger.info(f"{path}: {len(labels)} orientation label(s)")
    return labels


def format_orientation_labels(labels: OrientationLabels) -> str:
    records = [{"image_id": image_id, "annotation_id": ann_id,
                "orientation": round(labels[(image_id, ann_id)], ORIENTATION_DECIMALS)}
               for image_id, ann_id in sorted(labels)]
    return json.dumps({"labels": records}, indent=2) + "\n"


def write_orientation_labels(labels: OrientationLabels, path: Path) -> None:
    Path(path).write_text(format_orientation_labels(labels), encoding="utf-8")


def convert_native_labels(path: Path) -> OrientationLabels:
    """
    Read the orientation benchmark's native layout, a JSON object mapping
    "<image_id>_<annotation_id>" to degrees.

    Raises:
        DatasetFormatError: not an object, or a key/value of the wrong shape
        AngleRangeError: angle outside [0, 360]
    """
    document = _read_json(path)
    if not isinstance(document, dict):
        raise DatasetFormatError(f"{path}: expected an object keyed '<image_id>_<annotation_id>'")
    labels: OrientationLabels = {}
    for name, value in document.items():
        parts = str(name).split("_")
        try:
            if len(parts) != 2:
                raise ValueError("key must look like '<image_id>_<annotation_id>'")
            key = (int(parts[0]), int(parts[1]))
            angle = float(value)
        except (TypeError, ValueError) as exc:
            raise DatasetFormatError(f"{path}: bad entry {name!r}: {exc}") from exc
        if key in labels:
            raise LabelConflictError(f"{path}: duplicate label for {name!r}")
        labels[key] = normalize_degrees(angle)
    return labels


def reconstruct(persons: PersonAnnotations, labels: OrientationLabels,
                weak_labels: Optional[OrientationLabels] = None, permit_missing: bool = False,
                split: str = "train") -> ReconstructedDataset:
    """
    Merge person boxes with strong and weak orientation labels.

    An image is kept when at least one of its persons carries a strong label.
    On kept images, strongly labelled persons come from the orientation
    benchmark; every other person is restored with its weak label. A strong
    label always wins over a weak one for the same instance.

    Raises:
        UncoveredInstanceError: restored persons without a weak label (unless
            `permit_missing`, which drops and counts them instead)
    """
    weak_labels = weak_labels or {}
    orphans = sorted(k for k in labels if k not in persons.instances)
    if orphans:
        logger.warning(f"{len(orphans)} orientation label(s) refer to no person instance")
    kept_images = sorted({k[0] for k in labels if k in persons.instances})
    kept = set(kept_images)

    instances: List[AnnotatedInstance] = []
    missing: List[InstanceKey] = []
    for key in sorted(persons.instances):
        if key[0] not in kept:
            continue
        person = persons.instances[key]
        if key in labels:
            instances.append(AnnotatedInstance(person.image_id, person.annotation_id, person.box,
                                               orientation=labels[key], weak=False,
                                               source=InstanceSource.ORIENTATION_BENCHMARK))
        elif key in weak_labels:
            instances.append(AnnotatedInstance(person.image_id, person.annotation_id, person.box,
                                               orientation=weak_labels[key], weak=True,
                                               source=InstanceSource.RESTORED))
        else:
            missing.append(key)

    if missing and not permit_missing:
        raise UncoveredInstanceError(missing)
    if missing:
        logger.warning(f"dropped {len(missing)} person instance(s) without any orientation label")

    weak = sum(1 for inst in instances if inst.weak)
    stats = DatasetStats(
        split=split,
        images=len(kept_images),
        instances=len(instances),
        strong=len(instances) - weak,
        weak=weak,
        dropped=len(missing),
        extras={"orphan_labels": len(orphans), "crowd_excluded": persons.crowd,
                "unknown_categories": persons.unknown_categories},
    )
    return ReconstructedDataset(instances=instances,
                                images=[persons.images[i] for i in kept_images],
                                categories=persons.categories, stats=stats)


def merged_document(dataset: ReconstructedDataset) -> Dict[str, Any]:
    """Detection-benchmark layout plus orientation / weak / source per annotation."""
    person_ids = _person_category_ids(dataset.categories)
    category_id = min(person_ids)
    annotations = []
    for inst in dataset.instances:
        x, y, w, h = inst.box.to_xywh()
        annotations.append({
            "id": inst.annotation_id,
            "image_id": inst.image_id,
            "category_id": category_id,
            "bbox": [round(x, BOX_DECIMALS), round(y, BOX_DECIMALS),
                     round(w, BOX_DECIMALS), round(h, BOX_DECIMALS)],
            "area": round(w * h, BOX_DECIMALS),
            "iscrowd": 0,
            "orientation": round(inst.orientation, ORIENTATION_DECIMALS),
            "weak": inst.weak,
            "source": inst.source.value,
        })
    return {
        "images": dataset.images,
        "annotations": annotations,
        "categories": dataset.categories,
    }


def write_merged(dataset: ReconstructedDataset, path: Path) -> None:
    """Sorted keys and fixed rounding keep the output bit-stable across runs."""
    text = json.dumps(merged_document(dataset), indent=2, sort_keys=True) + "\n"
    Path(path).write_text(text, encoding="utf-8")


def load_merged_gts(path: Path) -> List[AnnotatedInstance]:
    """
    Ground truths from a merged (or plain detection-benchmark) file. Missing
    `orientation` means unlabelled; missing `weak` means strong.

    Raises:
        DatasetFormatError: malformed JSON or layout
    """
    document = _read_json(path)
    annotations = _require_records(_require_list(document, "annotations", path), "annotation",
                                   path)
    persons = _person_category_ids(_categories(document, path))
    out = []
    for ann in annotations:
        try:
            if ann.get("category_id", min(persons)) not in persons or ann.get("iscrowd", 0):
                continue
            orientation = ann.get("orientation")
            weak = bool(ann.get("weak", False))
            source = InstanceSource(ann.get("source", InstanceSource.RESTORED.value if weak
                                            else InstanceSource.ORIENTATION_BENCHMARK.value))
            out.append(AnnotatedInstance(
                image_id=int(ann["image_id"]), annotation_id=int(ann["id"]),
                box=Box2D.from_xywh(*(float(v) for v in ann["bbox"])),
                orientation=None if orientation is None else normalize_degrees(float(orientation)),
                weak=weak, source=source))
        except (KeyError, TypeError, ValueError) as exc:
            raise DatasetFormatError(f"{path}: malformed annotation {ann!r}: {exc}") from exc
    out.sort(key=lambda inst: inst.key)
    return out
