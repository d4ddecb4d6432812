"""numba-compiled twins of the kernels in ``_numpy.py``."""
import numpy as np
from numba import njit


@njit(cache=True)
def _pairwise_iou(a, b):
    n = a.shape[0]
    m = b.shape[0]
    out = np.zeros((n, m))
    for i in range(n):
        area_a = (a[i, 2] - a[i, 0]) * (a[i, 3] - a[i, 1])
        for j in range(m):
            iw = min(a[i, 2], b[j, 2]) - max(a[i, 0], b[j, 0])
            ih = min(a[i, 3], b[j, 3]) - max(a[i, 1], b[j, 1])
            inter = max(iw, 0.0) * max(ih, 0.0)
            area_b = (b[j, 2] - b[j, 0]) * (b[j, 3] - b[j, 1])
            union = area_a + area_b - inter
            if union > 0.0:
                out[i, j] = inter / union
    return out


def pairwise_iou(a, b):
    a = np.ascontiguousarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.ascontiguousarray(b, dtype=np.float64).reshape(-1, 4)
    return _pairwise_iou(a, b)


@njit(cache=True)
def _greedy_nms_keep(boxes, classes, iou_thresh, max_keep):
    n = boxes.shape[0]
    keep = np.empty(n, dtype=np.int64)
    suppressed = np.zeros(n, dtype=np.bool_)
    count = 0
    for i in range(n):
        if count >= max_keep:
            break
        if suppressed[i]:
            continue
        keep[count] = i
        count += 1
        area_i = (boxes[i, 2] - boxes[i, 0]) * (boxes[i, 3] - boxes[i, 1])
        for j in range(i + 1, n):
            if suppressed[j] or classes[j] != classes[i]:
                continue
            iw = min(boxes[i, 2], boxes[j, 2]) - max(boxes[i, 0], boxes[j, 0])
            ih = min(boxes[i, 3], boxes[j, 3]) - max(boxes[i, 1], boxes[j, 1])
            inter = max(iw, 0.0) * max(ih, 0.0)
            area_j = (boxes[j, 2] - boxes[j, 0]) * (boxes[j, 3] - boxes[j, 1])
            union = area_i + area_j - inter
            iou = inter / union if union > 0.0 else 0.0
            if iou >= iou_thresh:
                suppressed[j] = True
    return keep[:count].copy()


def greedy_nms_keep(boxes, classes, iou_thresh, max_keep):
    boxes = np.ascontiguousarray(boxes, dtype=np.float64).reshape(-1, 4)
    classes = np.ascontiguousarray(classes, dtype=np.int64)
    return _greedy_nms_keep(boxes, classes, float(iou_thresh), int(max_keep))


@njit(cache=True)
def _greedy_match(ious, gt_ignore, iou_thresh):
    n_det, n_gt = ious.shape
    det_match = np.full(n_det, -1, dtype=np.int64)
    det_ignore = np.zeros(n_det, dtype=np.bool_)
    gt_taken = np.zeros(n_gt, dtype=np.bool_)
    floor = min(iou_thresh, 1.0 - 1e-10)
    for d in range(n_det):
        best = floor
        m = -1
        for g in range(n_gt):
            if gt_taken[g]:
                continue
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


def greedy_match(ious, gt_ignore, iou_thresh):
    ious = np.ascontiguousarray(ious, dtype=np.float64)
    if ious.ndim != 2:
        ious = ious.reshape(0, 0)
    gt_ignore = np.ascontiguousarray(gt_ignore, dtype=np.bool_)
    return _greedy_match(ious, gt_ignore, float(iou_thresh))
