"""Greedy NMS and the COCO-style average-precision suite.

Single category throughout. AP is the 101-point interpolated average
precision; the headline AP averages the ten IoU thresholds 0.50:0.05:0.95.
Size buckets split at areas 32^2 and 96^2 with half-open intervals.
Score ties break by input order everywhere, which keeps every result
deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .masks import BinaryMask, mask_iou

__all__ = [
    "AREA_BUCKETS",
    "Detection",
    "EvalReport",
    "GroundTruth",
    "IOU_THRESHOLDS",
    "TaskMetrics",
    "box_iou",
    "bbox_overlap",
    "compute_ap",
    "compute_coco_metrics",
    "mask_overlap",
    "match_detections",
    "nms",
]

IOU_THRESHOLDS = tuple(t / 100.0 for t in range(50, 100, 5))
RECALL_GRID = np.linspace(0.0, 1.0, 101)

SMALL_MAX = 32.0 ** 2
MEDIUM_MAX = 96.0 ** 2
AREA_BUCKETS = {
    "all": (0.0, float("inf")),
    "small": (0.0, SMALL_MAX),
    "medium": (SMALL_MAX, MEDIUM_MAX),
    "large": (MEDIUM_MAX, float("inf")),
}


@dataclass
class Detection:
    """One predicted instance: (x, y, w, h) box, confidence, optional mask."""

    image_id: int
    box: tuple[float, float, float, float]
    score: float
    mask: BinaryMask | None = None

    def __post_init__(self):
        x, y, w, h = (float(v) for v in self.box)
        if w <= 0 or h <= 0:
            raise ValueError(f"detection box extents must be positive, got w={w}, h={h}")
        if not np.isfinite(self.score):
            raise ValueError(f"detection score must be finite, got {self.score}")
        self.box = (x, y, w, h)


@dataclass
class GroundTruth:
    """One annotated instance; ``area`` is the mask pixel count."""

    image_id: int
    box: tuple[float, float, float, float]
    mask: BinaryMask
    area: float

    def __post_init__(self):
        x, y, w, h = (float(v) for v in self.box)
        if w <= 0 or h <= 0:
            raise ValueError(f"ground-truth box extents must be positive, got w={w}, h={h}")
        if self.area <= 0:
            raise ValueError(f"ground-truth area must be positive, got {self.area}")
        self.box = (x, y, w, h)


@dataclass
class TaskMetrics:
    """The six-metric row for one task; None marks an absent bucket."""

    ap: float | None
    ap50: float | None
    ap75: float | None
    ap_s: float | None
    ap_m: float | None
    ap_l: float | None

    def to_json_dict(self) -> dict:
        return {
            "AP": self.ap,
            "AP50": self.ap50,
            "AP75": self.ap75,
            "AP_S": self.ap_s,
            "AP_M": self.ap_m,
            "AP_L": self.ap_l,
        }


@dataclass
class EvalReport:
    detection: TaskMetrics | None = None
    segmentation: TaskMetrics | None = None

    def to_json_dict(self) -> dict:
        out = {}
        if self.detection is not None:
            out["detection"] = self.detection.to_json_dict()
        if self.segmentation is not None:
            out["segmentation"] = self.segmentation.to_json_dict()
        return out

    def render_table(self) -> str:
        header = ["Task", "AP", "AP50", "AP75", "AP_S", "AP_M", "AP_L"]
        rows = [header]
        for label, metrics in (("Detection", self.detection), ("Segmentation", self.segmentation)):
            if metrics is None:
                continue
            cells = [label]
            for value in (metrics.ap, metrics.ap50, metrics.ap75,
                          metrics.ap_s, metrics.ap_m, metrics.ap_l):
                cells.append("—" if value is None else f"{value:.3f}")
            rows.append(cells)
        widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
        lines = ["  ".join(cell.ljust(width) for cell, width in zip(row, widths)).rstrip()
                 for row in rows]
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# overlaps
# ---------------------------------------------------------------------------

def box_iou(a, b) -> float:
    """IoU of two (x, y, w, h) boxes; 0 for disjoint boxes."""
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    if aw <= 0 or ah <= 0 or bw <= 0 or bh <= 0:
        raise ValueError("box extents must be positive")
    ix = min(ax + aw, bx + bw) - max(ax, bx)
    iy = min(ay + ah, by + bh) - max(ay, by)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    return inter / (aw * ah + bw * bh - inter)


def bbox_overlap(det: Detection, gt: GroundTruth) -> float:
    return box_iou(det.box, gt.box)


def mask_overlap(det: Detection, gt: GroundTruth) -> float:
    if det.mask is None:
        raise ValueError("segmentation overlap requires detections to carry masks")
    return mask_iou(det.mask, gt.mask)


# ---------------------------------------------------------------------------
# suppression and matching
# ---------------------------------------------------------------------------

def nms(detections, iou_threshold: float):
    """Greedy suppression within one image's detections.

    Detections are visited in descending score (ties by input order); a
    detection is dropped when its box IoU with an already-kept detection
    exceeds the threshold. The kept list preserves visit order, so no two
    survivors overlap beyond the threshold.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise ValueError(f"NMS threshold must be in (0, 1], got {iou_threshold}")
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].score, i))
    kept: list[int] = []
    for i in order:
        if all(box_iou(detections[i].box, detections[j].box) <= iou_threshold for j in kept):
            kept.append(i)
    return [detections[i] for i in kept]


def match_detections(detections, ground_truths, iou_fn, threshold: float):
    """Greedy TP/FP labels for one image's detections.

    Detections must already be sorted by descending score. Each detection
    claims the still-unmatched ground truth of highest IoU >= threshold
    (ties to the lowest ground-truth index); every ground truth is
    claimed at most once.
    """
    labels, _ = _match_with_indices(detections, ground_truths, iou_fn, threshold)
    return labels


def _match_with_indices(detections, ground_truths, iou_fn, threshold):
    taken = [False] * len(ground_truths)
    labels: list[bool] = []
    matched: list[int | None] = []
    for det in detections:
        best_iou = 0.0
        best_idx = None
        for gi, gt in enumerate(ground_truths):
            if taken[gi] or det.image_id != gt.image_id:
                continue
            iou = iou_fn(det, gt)
            if iou >= threshold and (best_idx is None or iou > best_iou):
                best_iou = iou
                best_idx = gi
        if best_idx is None:
            labels.append(False)
            matched.append(None)
        else:
            taken[best_idx] = True
            labels.append(True)
            matched.append(best_idx)
    return labels, matched


# ---------------------------------------------------------------------------
# average precision
# ---------------------------------------------------------------------------

def _interpolated_ap(tp_flags: list[bool], ignore_flags: list[bool], n_gt: int) -> float:
    """101-point interpolated AP from score-ordered labels.

    Ignored detections contribute to neither precision nor recall.
    """
    precisions = []
    recalls = []
    tp = fp = 0
    for is_tp, ignore in zip(tp_flags, ignore_flags):
        if ignore:
            continue
        if is_tp:
            tp += 1
        else:
            fp += 1
        precisions.append(tp / (tp + fp))
        recalls.append(tp / n_gt)
    if not precisions:
        return 0.0
    precisions = np.asarray(precisions)
    recalls = np.asarray(recalls)
    total = 0.0
    for r in RECALL_GRID:
        eligible = precisions[recalls >= r]
        total += eligible.max() if eligible.size else 0.0
    return total / RECALL_GRID.size


def _sorted_detection_order(detections) -> list[int]:
    return sorted(range(len(detections)), key=lambda i: (-detections[i].score, i))


def compute_ap(detections, ground_truths, iou_fn, threshold: float) -> float | None:
    """AP at a single IoU threshold over any number of images.

    Matching is greedy per image; the PR curve accumulates over all
    detections pooled in descending-score order. Returns None when there
    are no ground truths (the metric is undefined).
    """
    if not ground_truths:
        return None
    order = _sorted_detection_order(detections)
    ordered = [detections[i] for i in order]
    labels = _labels_by_image(ordered, ground_truths, iou_fn, threshold)
    return _interpolated_ap(labels, [False] * len(labels), len(ground_truths))


def _labels_by_image(ordered_dets, ground_truths, iou_fn, threshold):
    """Greedy-match score-ordered detections image by image; returns
    per-detection TP flags aligned with ``ordered_dets``."""
    labels = [False] * len(ordered_dets)
    for image_id in sorted({d.image_id for d in ordered_dets}):
        det_idx = [i for i, d in enumerate(ordered_dets) if d.image_id == image_id]
        gts = [g for g in ground_truths if g.image_id == image_id]
        got = match_detections([ordered_dets[i] for i in det_idx], gts, iou_fn, threshold)
        for i, flag in zip(det_idx, got):
            labels[i] = flag
    return labels


def _bucket_ap(ordered_dets, ground_truths, iou_fn, threshold, bucket, det_area_fn):
    """AP restricted to ground truths of an area bucket.

    Matching runs against all ground truths; afterwards a detection
    matched to an out-of-bucket ground truth is ignored, and an unmatched
    detection whose own area is out of the bucket is ignored too.
    """
    lo, hi = bucket
    in_bucket = [lo <= g.area < hi for g in ground_truths]
    n_gt = sum(in_bucket)
    if n_gt == 0:
        return None

    tp_flags = [False] * len(ordered_dets)
    ignore_flags = [False] * len(ordered_dets)
    for image_id in sorted({d.image_id for d in ordered_dets}):
        det_idx = [i for i, d in enumerate(ordered_dets) if d.image_id == image_id]
        gt_idx = [k for k, g in enumerate(ground_truths) if g.image_id == image_id]
        gts = [ground_truths[k] for k in gt_idx]
        _, matched = _match_with_indices(
            [ordered_dets[i] for i in det_idx], gts, iou_fn, threshold
        )
        for i, local in zip(det_idx, matched):
            if local is not None:
                if in_bucket[gt_idx[local]]:
                    tp_flags[i] = True
                else:
                    ignore_flags[i] = True
            else:
                area = det_area_fn(ordered_dets[i])
                if not lo <= area < hi:
                    ignore_flags[i] = True
    return _interpolated_ap(tp_flags, ignore_flags, n_gt)


def compute_coco_metrics(detections, ground_truths, task: str, max_dets: int = 100) -> EvalReport:
    """The full metric table for one task (``bbox`` or ``segm``).

    Ground truths bucket by their stored area (mask pixel count); an
    unmatched detection buckets by box area for the detection task and by
    its own mask pixel count for the segmentation task. At most
    ``max_dets`` top-scoring detections per image are evaluated.
    """
    if task == "bbox":
        iou_fn = bbox_overlap

        def det_area(det):
            return det.box[2] * det.box[3]

    elif task == "segm":
        iou_fn = mask_overlap

        def det_area(det):
            if det.mask is None:
                raise ValueError("segmentation task requires detections to carry masks")
            return float(det.mask.area())

    else:
        raise ValueError(f"unknown task {task!r}; expected 'bbox' or 'segm'")

    capped = _cap_per_image(detections, max_dets)
    order = _sorted_detection_order(capped)
    ordered = [capped[i] for i in order]

    def averaged(bucket):
        if not ground_truths:
            return None
        values = []
        for threshold in IOU_THRESHOLDS:
            ap = _bucket_ap(ordered, ground_truths, iou_fn, threshold, bucket, det_area)
            if ap is None:
                return None
            values.append(ap)
        return float(np.mean(values))

    def single(threshold):
        if not ground_truths:
            return None
        return _bucket_ap(ordered, ground_truths, iou_fn, threshold, AREA_BUCKETS["all"], det_area)

    metrics = TaskMetrics(
        ap=averaged(AREA_BUCKETS["all"]),
        ap50=single(0.5),
        ap75=single(0.75),
        ap_s=averaged(AREA_BUCKETS["small"]),
        ap_m=averaged(AREA_BUCKETS["medium"]),
        ap_l=averaged(AREA_BUCKETS["large"]),
    )
    if task == "bbox":
        return EvalReport(detection=metrics)
    return EvalReport(segmentation=metrics)


def _cap_per_image(detections, max_dets: int):
    by_image: dict[int, list[int]] = {}
    for i, det in enumerate(detections):
        by_image.setdefault(det.image_id, []).append(i)
    keep: set[int] = set()
    for indices in by_image.values():
        ranked = sorted(indices, key=lambda i: (-detections[i].score, i))
        keep.update(ranked[:max_dets])
    return [det for i, det in enumerate(detections) if i in keep]
