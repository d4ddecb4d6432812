"""COCO-style average precision and positive/negative balance statistics."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import kernels
from .assignment import GroundTruth
from .geometry import Box, box_area, iou, pairwise_iou
from .inference import Detections

IOU_THRESHOLDS = np.linspace(0.5, 0.95, 10)
RECALL_THRESHOLDS = np.linspace(0.0, 1.0, 101)
AREA_RANGES = {
    "all": (0.0, 1e10),
    "small": (0.0, 32.0 ** 2),
    "medium": (32.0 ** 2, 96.0 ** 2),
    "large": (96.0 ** 2, 1e10),
}


@dataclass(frozen=True)
class EvalReport:
    ap: float
    ap50: float
    ap75: float
    per_class: dict = field(default_factory=dict)
    ap_small: float = float("nan")
    ap_medium: float = float("nan")
    ap_large: float = float("nan")
    num_gt: int = 0
    num_detections: int = 0

    def table(self) -> str:
        rows = [
            ("AP", self.ap), ("AP50", self.ap50), ("AP75", self.ap75),
            ("AP_S", self.ap_small), ("AP_M", self.ap_medium), ("AP_L", self.ap_large),
        ]
        rows += [(f"AP[class {c}]", v) for c, v in sorted(self.per_class.items())]
        width = max(len(name) for name, _ in rows)
        lines = [f"{name:<{width}}  {_fmt(v):>8}" for name, v in rows]
        lines.append(f"{'#gt':<{width}}  {self.num_gt:>8d}")
        lines.append(f"{'#det':<{width}}  {self.num_detections:>8d}")
        return "\n".join(lines)

    def to_lines(self) -> list:
        out = [
            f"ap = {_fmt(self.ap)}",
            f"ap50 = {_fmt(self.ap50)}",
            f"ap75 = {_fmt(self.ap75)}",
            f"ap_small = {_fmt(self.ap_small)}",
            f"ap_medium = {_fmt(self.ap_medium)}",
            f"ap_large = {_fmt(self.ap_large)}",
            f"num_gt = {self.num_gt}",
            f"num_detections = {self.num_detections}",
        ]
        out += [f"ap_class_{c} = {_fmt(v)}" for c, v in sorted(self.per_class.items())]
        return out


def _fmt(v) -> str:
    return "nan" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.6g}"


def _class_matches(dets: Detections, gt: Mapping[int, GroundTruth], cls: int,
                   iou_thresh: float, area_range=AREA_RANGES["all"]):
    """Score-ordered (scores, tp, fp) after greedy matching, plus #non-ignored GT."""
    lo, hi = area_range
    sel = dets.take(np.flatnonzero(dets.classes == cls))
    sel = sel.take(sel.order())
    image_ids = sorted(set(gt) | set(sel.image_id.tolist()))
    scores, tps, fps, order_keys = [], [], [], []
    npos = 0
    for img in image_ids:
        g = gt.get(img)
        if g is not None and len(g):
            gboxes = g.boxes[g.classes == cls]
        else:
            gboxes = np.zeros((0, 4))
        garea = box_area(gboxes)
        g_ign = (garea < lo) | (garea > hi)
        gorder = np.argsort(g_ign, kind="stable")
        gboxes = gboxes[gorder]
        g_ign = g_ign[gorder]
        npos += int(np.count_nonzero(~g_ign))
        d_idx = np.flatnonzero(sel.image_id == img)
        if d_idx.size == 0:
            continue
        dboxes = sel.boxes[d_idx]
        ious = pairwise_iou(dboxes, gboxes) if gboxes.shape[0] else np.zeros((d_idx.size, 0))
        match, d_ign = kernels.greedy_match(ious, g_ign, iou_thresh)
        darea = box_area(dboxes)
        d_ign = d_ign | ((match < 0) & ((darea < lo) | (darea > hi)))
        keep = ~d_ign
        scores.append(sel.scores[d_idx][keep])
        tps.append((match >= 0)[keep])
        fps.append((match < 0)[keep])
        order_keys.append(d_idx[keep])
    if not scores:
        return np.zeros(0), np.zeros(0, bool), np.zeros(0, bool), npos
    scores = np.concatenate(scores)
    tp = np.concatenate(tps)
    fp = np.concatenate(fps)
    # restore the global (score desc, image, location, anchor) order
    pos = np.concatenate(order_keys)
    o = np.argsort(pos, kind="stable")
    return scores[o], tp[o], fp[o], npos


def _interpolated_ap(tp, fp, npos) -> float:
    if npos == 0:
        return float("nan")
    if tp.size == 0:
        return 0.0
    tp_c = np.cumsum(tp).astype(np.float64)
    fp_c = np.cumsum(fp).astype(np.float64)
    recall = tp_c / npos
    precision = tp_c / (tp_c + fp_c)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_THRESHOLDS, side="left")
    q = np.where(idx < envelope.size, envelope[np.minimum(idx, envelope.size - 1)], 0.0)
    return float(q.mean())


def _classes(dets: Detections, gt: Mapping[int, GroundTruth]) -> list:
    cls = set()
    for g in gt.values():
        cls.update(g.classes.tolist())
    return sorted(cls)


def average_precision(dets: Detections, gt: Mapping[int, GroundTruth], iou_thresh: float = 0.5,
                      cls: int | None = None, area_range=AREA_RANGES["all"]) -> float:
    """101-point interpolated AP at one IoU threshold.

    With ``cls`` given, returns that class's AP (nan when it has no ground
    truth); otherwise the mean over classes that have ground truth.
    """
    if cls is not None:
        _, tp, fp, npos = _class_matches(dets, gt, cls, iou_thresh, area_range)
        return _interpolated_ap(tp, fp, npos)
    vals = [average_precision(dets, gt, iou_thresh, c, area_range) for c in _classes(dets, gt)]
    vals = [v for v in vals if not math.isnan(v)]
    return float(np.mean(vals)) if vals else float("nan")


def map_report(dets: Detections, gt: Mapping[int, GroundTruth], area_breakdown: bool = True) -> EvalReport:
    """AP over IoU 0.50:0.05:0.95, AP50, AP75 and per-class AP."""
    num_gt = sum(len(g) for g in gt.values())
    if num_gt == 0:
        raise ValueError("cannot evaluate: dataset has no ground truth")
    classes = _classes(dets, gt)
    table = np.array([[average_precision(dets, gt, t, c) for t in IOU_THRESHOLDS] for c in classes])
    per_class = {c: float(table[i].mean()) for i, c in enumerate(classes)}

    def mean_at(t, rng=AREA_RANGES["all"]):
        vals = [average_precision(dets, gt, t, c, rng) for c in classes]
        vals = [v for v in vals if not math.isnan(v)]
        return float(np.mean(vals)) if vals else float("nan")

    def mean_all(rng):
        vals = [mean_at(t, rng) for t in IOU_THRESHOLDS]
        vals = [v for v in vals if not math.isnan(v)]
        return float(np.mean(vals)) if vals else float("nan")

    sizes = {}
    if area_breakdown:
        sizes = {name: mean_all(AREA_RANGES[name]) for name in ("small", "medium", "large")}
    return EvalReport(
        ap=float(table.mean()),
        ap50=mean_at(0.5),
        ap75=mean_at(0.75),
        per_class=per_class,
        ap_small=sizes.get("small", float("nan")),
        ap_medium=sizes.get("medium", float("nan")),
        ap_large=sizes.get("large", float("nan")),
        num_gt=num_gt,
        num_detections=len(dets),
    )


def brute_force_ap(dets: Detections, gt: Mapping[int, GroundTruth], iou_thresh: float, cls: int) -> float:
    """Reference AP built from every score cut-off, one box pair at a time.

    For each prefix of the ranked detections, matching is redone from
    scratch with scalar IoU; interpolated precision at recall r is the best
    precision among cut-offs reaching r. Slow, for validation only.
    """
    ranked = sorted(
        (d for d in dets if d.cls == cls),
        key=lambda d: (-d.score, d.image_id, d.location, d.anchor, d.cls),
    )
    truth = []
    for img, g in gt.items():
        for b, c in zip(g.boxes, g.classes):
            if c == cls:
                truth.append((img, Box(*b)))
    if not truth:
        return float("nan")
    points = []
    for n in range(1, len(ranked) + 1):
        taken = [False] * len(truth)
        tp = 0
        for d in ranked[:n]:
            best, m = iou_thresh, -1
            for j, (img, box) in enumerate(truth):
                if taken[j] or img != d.image_id:
                    continue
                v = iou(d.box, box)
                if v >= best:
                    best, m = v, j
            if m >= 0:
                taken[m] = True
                tp += 1
        points.append((tp / len(truth), tp / n))
    total = 0.0
    for r in RECALL_THRESHOLDS:
        reach = [p for rec, p in points if rec >= r]
        total += max(reach) if reach else 0.0
    return total / len(RECALL_THRESHOLDS)


@dataclass(frozen=True)
class ImbalanceStats:
    anchor_pos: int
    anchor_neg: int
    location_pos: int
    location_neg: int

    def __add__(self, other: "ImbalanceStats") -> "ImbalanceStats":
        return ImbalanceStats(self.anchor_pos + other.anchor_pos, self.anchor_neg + other.anchor_neg,
                              self.location_pos + other.location_pos,
                              self.location_neg + other.location_neg)

    @property
    def anchor_fraction(self) -> float:
        return self.anchor_pos / max(1, self.anchor_pos + self.anchor_neg)

    @property
    def location_fraction(self) -> float:
        return self.location_pos / max(1, self.location_pos + self.location_neg)

    @property
    def anchor_ratio(self) -> float:
        """Negatives per positive anchor (the N in 1:N); inf without positives."""
        return self.anchor_neg / self.anchor_pos if self.anchor_pos else float("inf")

    @property
    def location_ratio(self) -> float:
        return self.location_neg / self.location_pos if self.location_pos else float("inf")

    def summary(self) -> str:
        return (
            f"anchors: {self.anchor_pos} pos / {self.anchor_neg} neg (1:{self.anchor_ratio:.1f}); "
            f"locations: {self.location_pos} pos / {self.location_neg} neg (1:{self.location_ratio:.1f})"
        )


def imbalance_stats(anchor_labels, location_labels) -> ImbalanceStats:
    """Positive/negative counts for pre-regression anchor labels and location labels."""
    a = np.asarray(anchor_labels)
    loc = np.asarray(location_labels)
    a_pos = int(np.count_nonzero(a > 0))
    l_pos = int(np.count_nonzero(loc > 0))
    return ImbalanceStats(a_pos, int(a.size) - a_pos, l_pos, int(loc.size) - l_pos)
