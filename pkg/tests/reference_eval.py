"""Reference implementation of the metric suite, written independently
from the same rules as the engine: exhaustive per-threshold evaluation
with plain loops, corner-coordinate IoU, and per-grid-point precision
scans. Shares no code with maisenet.metrics.
"""

from __future__ import annotations


def ref_box_iou(a, b):
    ax0, ay0, aw, ah = a
    bx0, by0, bw, bh = b
    ax1, ay1 = ax0 + aw, ay0 + ah
    bx1, by1 = bx0 + bw, by0 + bh
    ix0, iy0 = max(ax0, bx0), max(ay0, by0)
    ix1, iy1 = min(ax1, bx1), min(ay1, by1)
    iw, ih = ix1 - ix0, iy1 - iy0
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    return inter / union


def ref_mask_iou(a, b):
    inter = 0
    union = 0
    ha = a.shape[0]
    wa = a.shape[1]
    for y in range(ha):
        for x in range(wa):
            va, vb = bool(a[y, x]), bool(b[y, x])
            if va and vb:
                inter += 1
            if va or vb:
                union += 1
    return inter / union


def ref_greedy_match(dets, gts, iou_table, threshold):
    """dets already sorted by descending score; ties resolved upstream.

    Returns the matched gt index (or None) per detection: highest IoU >=
    threshold among unmatched ground truths, ties to the lowest index.
    """
    used = set()
    matches = []
    for di in range(len(dets)):
        best = None
        best_iou = None
        for gi in range(len(gts)):
            if gi in used:
                continue
            iou = iou_table[(di, gi)]
            if iou >= threshold and (best is None or iou > best_iou):
                best = gi
                best_iou = iou
        if best is not None:
            used.add(best)
        matches.append(best)
    return matches


def ref_ap_from_labels(labels, n_gt):
    """101-point interpolated AP; labels are ("tp"|"fp"|"ignore") in
    descending-score order."""
    points = []
    tp = fp = 0
    for label in labels:
        if label == "ignore":
            continue
        if label == "tp":
            tp += 1
        else:
            fp += 1
        points.append((tp / n_gt, tp / (tp + fp)))
    total = 0.0
    for i in range(101):
        recall = i / 100.0
        best = 0.0
        for r, p in points:
            if r >= recall and p > best:
                best = p
        total += best
    return total / 101.0


def ref_evaluate(dets, gts, task, max_dets=100):
    """Full table {AP, AP50, AP75, AP_S, AP_M, AP_L} or None entries.

    dets: list of dicts {image_id, box, score, mask(optional), order}
    gts: list of dicts {image_id, box, mask, area}
    """
    thresholds = [t / 100.0 for t in range(50, 100, 5)]
    buckets = {
        "all": (0.0, float("inf")),
        "small": (0.0, 32.0 ** 2),
        "medium": (32.0 ** 2, 96.0 ** 2),
        "large": (96.0 ** 2, float("inf")),
    }

    # per-image cap, ties by input order
    capped = []
    for image_id in sorted({d["image_id"] for d in dets}):
        group = [d for d in dets if d["image_id"] == image_id]
        group.sort(key=lambda d: (-d["score"], d["order"]))
        capped.extend(group[:max_dets])
    capped.sort(key=lambda d: (-d["score"], d["order"]))

    def overlap(det, gt):
        if task == "bbox":
            return ref_box_iou(det["box"], gt["box"])
        return ref_mask_iou(det["mask"], gt["mask"])

    def det_area(det):
        if task == "bbox":
            return det["box"][2] * det["box"][3]
        count = 0
        mask = det["mask"]
        for y in range(mask.shape[0]):
            for x in range(mask.shape[1]):
                if mask[y, x]:
                    count += 1
        return float(count)

    def bucket_ap(threshold, bucket):
        lo, hi = buckets[bucket]
        n_gt = sum(1 for g in gts if lo <= g["area"] < hi)
        if n_gt == 0:
            return None
        labels = []
        for image_id in sorted({d["image_id"] for d in capped} | {g["image_id"] for g in gts}):
            image_dets = [d for d in capped if d["image_id"] == image_id]
            image_gts = [g for g in gts if g["image_id"] == image_id]
            iou_table = {
                (di, gi): overlap(image_dets[di], image_gts[gi])
                for di in range(len(image_dets))
                for gi in range(len(image_gts))
            }
            matches = ref_greedy_match(image_dets, image_gts, iou_table, threshold)
            for det, match in zip(image_dets, matches):
                if match is not None:
                    gt = image_gts[match]
                    if lo <= gt["area"] < hi:
                        label = "tp"
                    else:
                        label = "ignore"
                elif not lo <= det_area(det) < hi:
                    label = "ignore"
                else:
                    label = "fp"
                labels.append((det["score"], det["order"], label))
        labels.sort(key=lambda item: (-item[0], item[1]))
        return ref_ap_from_labels([label for _, _, label in labels], n_gt)

    def averaged(bucket):
        if not gts:
            return None
        values = []
        for threshold in thresholds:
            ap = bucket_ap(threshold, bucket)
            if ap is None:
                return None
            values.append(ap)
        return sum(values) / len(values)

    return {
        "AP": averaged("all"),
        "AP50": bucket_ap(0.5, "all") if gts else None,
        "AP75": bucket_ap(0.75, "all") if gts else None,
        "AP_S": averaged("small"),
        "AP_M": averaged("medium"),
        "AP_L": averaged("large"),
    }
