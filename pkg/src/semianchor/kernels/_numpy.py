"""Pure-numpy implementations of the hot kernels.

Every function here has a twin in ``_numba.py`` with the same signature and
bit-identical output; the numpy path is the reference when numba is disabled.
"""
import numpy as np


def pairwise_iou(a, b):
    """IoU matrix between ``a`` (N, 4) and ``b`` (M, 4) corner boxes."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.maximum(iw, 0.0) * np.maximum(ih, 0.0)
    union = area_a[:, None] + area_b[None, :] - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0.0)
    return out


def greedy_nms_keep(boxes, classes, iou_thresh, max_keep):
    """Indices kept by greedy class-wise NMS over boxes already sorted by score."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    classes = np.asarray(classes, dtype=np.int64)
    n = boxes.shape[0]
    keep = np.empty(n, dtype=np.int64)
    suppressed = np.zeros(n, dtype=bool)
    count = 0
    for i in range(n):
        if count >= max_keep:
            break
        if suppressed[i]:
            continue
        keep[count] = i
        count += 1
        rest = np.arange(i + 1, n)
        rest = rest[(classes[rest] == classes[i]) & ~suppressed[rest]]
        if rest.size:
            ious = pairwise_iou(boxes[i:i + 1], boxes[rest])[0]
            suppressed[rest[ious >= iou_thresh]] = True
    return keep[:count].copy()


def greedy_match(ious, gt_ignore, iou_thresh):
    """COCO-style greedy matching of score-sorted detections to ground truth.

    ``ious`` is (D, G) with rows in descending-score order and ground truth
    ordered with ignored entries last. Returns ``(det_match, det_ignore)``
    where ``det_match[d]`` is the matched ground-truth column or -1.
    """
    ious = np.asarray(ious, dtype=np.float64)
    gt_ignore = np.asarray(gt_ignore, dtype=bool)
    n_det, n_gt = ious.shape
    det_match = np.full(n_det, -1, dtype=np.int64)
    det_ignore = np.zeros(n_det, dtype=bool)
    gt_taken = np.zeros(n_gt, dtype=bool)
    floor = min(iou_thresh, 1.0 - 1e-10)
    for d in range(n_det):
        best = floor
        m = -1
        for g in range(n_gt):
            if gt_taken[g]:
                continue
            # once matched to a regular gt, ignored gts cannot take over
            if m > -1 and not gt_ignore[m] and gt_ignore[g]:
                break
            if ious[d, g] < best:
                continue
            best = ious[d, g]
            m = g
        if m == -1:
            continue
        det_match[d] = m
        det_ignore[d] = gt_ignore[m]
        gt_taken[m] = True
    return det_match, det_ignore
