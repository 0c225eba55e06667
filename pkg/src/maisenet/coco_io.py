"""Strict readers/writers for the ground-truth and detection JSON files.

Ground truth is a COCO-subset document: top-level "images"
[{id, width, height, file_name}] and "annotations" [{id, image_id,
bbox [x,y,w,h], area, segmentation}], where segmentation is either a
polygon list-of-lists or an uncompressed run-length object
{"counts": [...], "size": [h, w]}. Detections are a JSON array of
{image_id, bbox, score, segmentation (optional)}. Unknown fields are
ignored; everything required is validated with a located diagnostic.
"""

from __future__ import annotations

import json

from .masks import BinaryMask, rasterize_polygons
from .metrics import Detection, GroundTruth

__all__ = [
    "ParseError",
    "load_detections",
    "load_ground_truth",
    "parse_detections",
    "parse_ground_truth",
    "write_detections",
]


class ParseError(ValueError):
    """Malformed input file; the message locates the problem."""


def _load_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at byte {exc.pos}: {exc.msg}") from None


def _require(obj, key, types, where):
    if not isinstance(obj, dict):
        raise ParseError(f"{where}: expected an object, got {type(obj).__name__}")
    if key not in obj:
        raise ParseError(f"{where}.{key}: missing required field")
    value = obj[key]
    if not isinstance(value, types) or isinstance(value, bool):
        names = types.__name__ if isinstance(types, type) else "/".join(t.__name__ for t in types)
        raise ParseError(f"{where}.{key}: expected {names}, got {type(value).__name__}")
    return value


def _parse_bbox(raw, where):
    if not isinstance(raw, list) or len(raw) != 4:
        raise ParseError(f"{where}: expected 4 numbers [x, y, w, h]")
    try:
        x, y, w, h = (float(v) for v in raw)
    except (TypeError, ValueError):
        raise ParseError(f"{where}: expected 4 numbers [x, y, w, h]") from None
    if w <= 0 or h <= 0:
        raise ParseError(f"{where}: box extents must be positive, got w={w}, h={h}")
    return (x, y, w, h)


def _parse_segmentation(raw, height, width, where) -> BinaryMask:
    if isinstance(raw, dict):
        counts = _require(raw, "counts", list, where)
        size = _require(raw, "size", list, where)
        if len(size) != 2:
            raise ParseError(f"{where}.size: expected [height, width]")
        try:
            mask = BinaryMask.from_rle(counts, size)
        except ValueError as exc:
            raise ParseError(f"{where}: {exc}") from None
        if (mask.height, mask.width) != (height, width):
            raise ParseError(
                f"{where}: mask size {mask.height}x{mask.width} does not match "
                f"image size {height}x{width}"
            )
        return mask
    if isinstance(raw, list):
        if not raw or not all(isinstance(p, list) for p in raw):
            raise ParseError(f"{where}: polygon segmentation must be a list of lists")
        try:
            return rasterize_polygons(raw, height, width)
        except ValueError as exc:
            raise ParseError(f"{where}: {exc}") from None
    raise ParseError(
        f"{where}: expected polygon list-of-lists or run-length object"
    )


def parse_ground_truth(doc) -> tuple[dict[int, tuple[int, int]], list[GroundTruth]]:
    """Validate a ground-truth document; returns ({image_id: (h, w)}, truths)."""
    images_raw = _require(doc, "images", list, "$")
    annotations_raw = _require(doc, "annotations", list, "$")
    images: dict[int, tuple[int, int]] = {}
    for i, image in enumerate(images_raw):
        where = f"images[{i}]"
        image_id = _require(image, "id", int, where)
        width = _require(image, "width", int, where)
        height = _require(image, "height", int, where)
        _require(image, "file_name", str, where)
        if width <= 0 or height <= 0:
            raise ParseError(f"{where}: image extents must be positive")
        if image_id in images:
            raise ParseError(f"{where}.id: duplicate image id {image_id}")
        images[image_id] = (height, width)

    truths: list[GroundTruth] = []
    for i, ann in enumerate(annotations_raw):
        where = f"annotations[{i}]"
        _require(ann, "id", int, where)
        image_id = _require(ann, "image_id", int, where)
        if image_id not in images:
            raise ParseError(f"{where}.image_id: unknown image id {image_id}")
        height, width = images[image_id]
        bbox = _parse_bbox(_require(ann, "bbox", list, where), f"{where}.bbox")
        area = float(_require(ann, "area", (int, float), where))
        if area <= 0:
            raise ParseError(f"{where}.area: must be positive, got {area}")
        if "segmentation" not in ann:
            raise ParseError(f"{where}.segmentation: missing required field")
        mask = _parse_segmentation(ann["segmentation"], height, width, f"{where}.segmentation")
        truths.append(GroundTruth(image_id=image_id, box=bbox, mask=mask, area=area))
    return images, truths


def load_ground_truth(path):
    return parse_ground_truth(_load_json(path))


def parse_detections(doc, images: dict[int, tuple[int, int]] | None = None) -> list[Detection]:
    """Validate a detection array; masks are decoded when present.

    ``images`` (from the ground truth) supplies extents for polygon
    segmentations and size validation; without it only run-length
    segmentations can be decoded.
    """
    if not isinstance(doc, list):
        raise ParseError(f"$: expected a JSON array of detections, got {type(doc).__name__}")
    detections: list[Detection] = []
    for i, det in enumerate(doc):
        where = f"$[{i}]"
        image_id = _require(det, "image_id", int, where)
        bbox = _parse_bbox(_require(det, "bbox", list, where), f"{where}.bbox")
        score = float(_require(det, "score", (int, float), where))
        mask = None
        if "segmentation" in det and det["segmentation"] is not None:
            raw = det["segmentation"]
            if images is not None and image_id in images:
                height, width = images[image_id]
            elif isinstance(raw, dict) and isinstance(raw.get("size"), list) and len(raw["size"]) == 2:
                height, width = int(raw["size"][0]), int(raw["size"][1])
            else:
                raise ParseError(
                    f"{where}.segmentation: image extents unknown; provide ground truth"
                )
            mask = _parse_segmentation(raw, height, width, f"{where}.segmentation")
        try:
            detections.append(Detection(image_id=image_id, box=bbox, score=score, mask=mask))
        except ValueError as exc:
            raise ParseError(f"{where}: {exc}") from None
    return detections


def load_detections(path, images: dict[int, tuple[int, int]] | None = None):
    return parse_detections(_load_json(path), images)


def write_detections(detections, path) -> None:
    records = []
    for det in detections:
        record = {
            "image_id": det.image_id,
            "bbox": list(det.box),
            "score": det.score,
        }
        if det.mask is not None:
            record["segmentation"] = {
                "counts": det.mask.rle_counts(),
                "size": [det.mask.height, det.mask.width],
            }
        records.append(record)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(records, fh, indent=2, sort_keys=True)
        fh.write("\n")
