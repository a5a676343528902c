"""
Prediction file format (JSON Lines).

One detection per line:

    {"image_id": 3, "x1": 10.0, "y1": 20.0, "x2": 40.0, "y2": 60.0,
     "score": 0.9, "orientation": 270.0}

Coordinates and orientation are rounded to 6 decimals; the score is written
at full precision so a tiny positive score never reads back as 0. Records
are sorted by (image_id, -score, x1, y1) so identical inputs give identical
bytes.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List

from ..core.angles import normalize_degrees
from ..core.models import BodyOrientError, Box2D, DatasetFormatError
from ..detection.postprocess import Detection

logger = logging.getLogger(__name__)

PREDICTION_KEYS = ("image_id", "x1", "y1", "x2", "y2", "score", "orientation")
DECIMALS = 6


def detection_to_record(det: Detection) -> Dict[str, Any]:
    x1, y1, x2, y2 = det.box.to_corners()
    return {
        "image_id": int(det.image_id),
        "x1": round(x1, DECIMALS),
        "y1": round(y1, DECIMALS),
        "x2": round(x2, DECIMALS),
        "y2": round(y2, DECIMALS),
        "score": float(det.score),
        "orientation": round(det.orientation, DECIMALS),
    }


def record_to_detection(record: Dict[str, Any]) -> Detection:
    """
    Raises:
        DatasetFormatError: missing keys or a record that is not a valid detection
    """
    missing = [k for k in PREDICTION_KEYS if k not in record]
    if missing:
        raise DatasetFormatError(f"prediction record lacks keys {missing}")
    try:
        box = Box2D.from_corners((float(record["x1"]), float(record["y1"]),
                                  float(record["x2"]), float(record["y2"])))
        return Detection(box=box, score=float(record["score"]),
                         orientation=normalize_degrees(float(record["orientation"])),
                         image_id=int(record["image_id"]))
    except (TypeError, ValueError) as exc:
        raise DatasetFormatError(f"invalid prediction record {record}: {exc}") from exc


def sorted_records(dets: Iterable[Detection]) -> List[Dict[str, Any]]:
    records = [detection_to_record(d) for d in dets]
    records.sort(key=lambda r: (r["image_id"], -r["score"], r["x1"], r["y1"]))
    return records


def format_predictions(dets: Iterable[Detection]) -> str:
    return "".join(json.dumps(r) + "\n" for r in sorted_records(dets))


def write_predictions(dets: Iterable[Detection], path: Path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(format_predictions(dets))


def parse_predictions(text: str, source: str = "<predictions>") -> List[Detection]:
    """
    Parse JSON Lines text; blank lines are ignored.

    Raises:
        DatasetFormatError: a line is not JSON or not a detection; `offset`
            is the UTF-8 byte position in `text`
    """
    detections = []
    position = 0
    for number, line in enumerate(text.splitlines(keepends=True), start=1):
        stripped = line.strip()
        if stripped:
            start = position + len(line[:len(line) - len(line.lstrip())].encode("utf-8"))
            try:
                record = json.loads(stripped)
            except json.JSONDecodeError as exc:
                raise DatasetFormatError(
                    f"{source} line {number}: {exc.msg}",
                    offset=start + len(stripped[:exc.pos].encode("utf-8"))) from exc
            if not isinstance(record, dict):
                raise DatasetFormatError(f"{source} line {number}: expected an object",
                                         offset=start)
            try:
                detections.append(record_to_detection(record))
            except BodyOrientError as exc:
                raise DatasetFormatError(f"{source} line {number}: {exc}", offset=start) from exc
        position += len(line.encode("utf-8"))
    return detections


def read_predictions(path: Path) -> List[Detection]:
    text = Path(path).read_text(encoding="utf-8")
    detections = parse_predictions(text, str(path))
    logger.debug(f"Read {len(detections)} predictions from {path}")
    return detections
