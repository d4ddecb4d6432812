"""Training-target construction.

Location labels come from the labels of the K anchors attached to each
location: the anchor-label histogram ``s_i`` is optionally re-weighted
(threshold moving) and the location takes the winning class. Anchors at
positive locations then get binary anchor-classification labels and soft
IoU scores measured *after* regression.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from .geometry import AnchorGrid, box_area, pairwise_iou

FG_THRESH = 0.5
BG_THRESH = 0.4
AC_IOU_THRESH = 0.5
SIGMA = 0.9


class AssignmentError(ValueError):
    """Targets cannot be built from the given inputs."""


@dataclass(frozen=True)
class GroundTruth:
    """Ground-truth boxes of one image; classes are 1..C (0 is background)."""

    boxes: np.ndarray
    classes: np.ndarray

    def __post_init__(self):
        boxes = np.asarray(self.boxes, dtype=np.float64).reshape(-1, 4)
        classes = np.asarray(self.classes, dtype=np.int64).reshape(-1)
        if boxes.shape[0] != classes.shape[0]:
            raise ValueError("boxes and classes differ in length")
        if np.any(classes < 1):
            raise ValueError("ground-truth classes must be >= 1")
        if not np.all(np.isfinite(boxes)):
            raise ValueError("non-finite ground-truth box")
        if np.any(boxes[:, 2] < boxes[:, 0]) or np.any(boxes[:, 3] < boxes[:, 1]):
            raise ValueError("ground-truth box corners out of order")
        object.__setattr__(self, "boxes", boxes)
        object.__setattr__(self, "classes", classes)

    def __len__(self):
        return self.boxes.shape[0]

    @classmethod
    def empty(cls) -> "GroundTruth":
        return cls(np.zeros((0, 4)), np.zeros(0, dtype=np.int64))


@dataclass(frozen=True)
class AnchorLabels:
    """Pre-regression anchor labels, all shaped (num_locations, K)."""

    labels: np.ndarray
    max_iou: np.ndarray
    matched: np.ndarray  # ground-truth index with max IoU, -1 without ground truth
    ignored: np.ndarray  # max IoU in [bg_thresh, fg_thresh), counted as background


@dataclass(frozen=True)
class LocationTargets:
    labels: np.ndarray  # (N,) in 0..C
    scores: np.ndarray  # (N, C+1) anchor-label histogram / K
    scaled: Optional[np.ndarray] = None  # (N, C+1) threshold-moved scores, gamma rule only

    @property
    def positive(self) -> np.ndarray:
        return self.labels > 0

    @property
    def num_positive(self) -> int:
        return int(np.count_nonzero(self.labels > 0))


@dataclass(frozen=True)
class ACTargets:
    """Anchor-classification targets, (num_locations, K) each.

    Entries at negative locations are zero and ``matched`` is -1 there.
    """

    location_labels: np.ndarray
    mu: np.ndarray
    mu_hat: np.ndarray
    y_hat: np.ndarray
    matched: np.ndarray
    post_labels: np.ndarray = field(repr=False)

    @property
    def num_positive_anchors(self) -> int:
        return int(np.count_nonzero(self.y_hat))


def label_anchors(
    anchors,
    gt: GroundTruth,
    fg_thresh: float = FG_THRESH,
    bg_thresh: float = BG_THRESH,
) -> AnchorLabels:
    """Give every anchor the class of its best ground truth when IoU >= fg_thresh.

    ``anchors`` is an :class:`AnchorGrid` or an (N, K, 4) array. Anchors in
    the ignore band ``[bg_thresh, fg_thresh)`` are labeled background.
    """
    if not 0.0 <= bg_thresh <= fg_thresh <= 1.0:
        raise ValueError(f"need 0 <= bg_thresh <= fg_thresh <= 1, got {bg_thresh}, {fg_thresh}")
    a = anchors.anchors if isinstance(anchors, AnchorGrid) else np.asarray(anchors, dtype=np.float64)
    n, k = a.shape[:2]
    if len(gt) == 0:
        zeros = np.zeros((n, k))
        return AnchorLabels(
            np.zeros((n, k), dtype=np.int64), zeros, np.full((n, k), -1, dtype=np.int64),
            np.zeros((n, k), dtype=bool),
        )
    ious = pairwise_iou(a.reshape(-1, 4), gt.boxes)
    matched = np.argmax(ious, axis=1)
    max_iou = ious[np.arange(ious.shape[0]), matched]
    labels = np.where(max_iou >= fg_thresh, gt.classes[matched], 0)
    ignored = (max_iou >= bg_thresh) & (max_iou < fg_thresh)
    return AnchorLabels(
        labels.reshape(n, k).astype(np.int64),
        max_iou.reshape(n, k),
        matched.reshape(n, k).astype(np.int64),
        ignored.reshape(n, k),
    )


def location_histogram(anchor_labels, num_classes: int) -> np.ndarray:
    """(N, C+1) integer counts of anchor labels per location."""
    labels = np.asarray(anchor_labels, dtype=np.int64)
    if labels.ndim == 1:
        labels = labels[None, :]
    if labels.size and (labels.min() < 0 or labels.max() > num_classes):
        raise ValueError("anchor label out of range 0..C")
    classes = np.arange(num_classes + 1)
    return (labels[:, :, None] == classes[None, None, :]).sum(axis=1)


def score_location(anchor_labels, num_classes: int) -> np.ndarray:
    """Anchor-label histogram divided by K: ``s_i^c = #{k: y_ik = c} / K``.

    Accepts one location's K labels or an (N, K) array; the result keeps the
    leading dimension of the input.
    """
    labels = np.asarray(anchor_labels, dtype=np.int64)
    counts = location_histogram(labels, num_classes)
    s = counts / labels.shape[-1]
    return s[0] if labels.ndim == 1 else s


def _pick_label(scaled, fg_scores):
    # background loses every tie against foreground; lowest class wins fg ties
    best_c = 0
    best_v = None
    for c, v in enumerate(fg_scores, start=1):
        if best_v is None or v > best_v:
            best_c, best_v = c, v
    if best_v is None or best_v <= 0:
        return 0
    fg_scaled = scaled[best_c]
    return 0 if scaled[0] > fg_scaled else best_c


def threshold_move(s, gamma):
    """Re-weight background by ``gamma`` and foreground by ``1 - gamma``.

    Works on a single score vector of any numeric type (floats or
    :class:`fractions.Fraction` for exact checks). Returns ``(scaled, label)``.
    """
    if not 0 <= gamma <= 1:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    s = list(s)
    scaled = [gamma * s[0]] + [(1 - gamma) * v for v in s[1:]]
    return tuple(scaled), _pick_label(scaled, s[1:])


def threshold_move_batch(scores, gamma: float):
    """Vectorised :func:`threshold_move` over an (N, C+1) score array."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    scores = np.asarray(scores, dtype=np.float64)
    scaled = scores * (1.0 - gamma)
    scaled[:, 0] = scores[:, 0] * gamma
    labels = _fg_argmax(scores)
    best = scaled[np.arange(scores.shape[0]), np.maximum(labels, 1)] if scores.shape[1] > 1 else 0.0
    labels = np.where(scaled[:, 0] > best, 0, labels)
    return scaled, labels


def _fg_argmax(scores):
    if scores.shape[1] <= 1:
        return np.zeros(scores.shape[0], dtype=np.int64)
    fg = scores[:, 1:]
    labels = np.argmax(fg, axis=1) + 1
    return np.where(fg.max(axis=1) > 0, labels, 0).astype(np.int64)


def label_location_simplified(s) -> int:
    """Gamma-free rule: background only when every anchor is background."""
    s = list(s)
    if s[0] == 1 or all(v <= 0 for v in s[1:]):
        return 0
    return _pick_label([0] + s[1:], s[1:])


def label_locations_simplified(scores) -> np.ndarray:
    return _fg_argmax(np.asarray(scores, dtype=np.float64))


def assign_locations(
    anchor_labels: AnchorLabels | np.ndarray,
    num_classes: int,
    gamma: Optional[float] = None,
) -> LocationTargets:
    """Location targets from anchor votes; ``gamma=None`` picks the simplified rule."""
    labels = anchor_labels.labels if isinstance(anchor_labels, AnchorLabels) else anchor_labels
    scores = score_location(np.asarray(labels).reshape(len(labels), -1), num_classes)
    if gamma is None:
        return LocationTargets(label_locations_simplified(scores), scores)
    scaled, loc = threshold_move_batch(scores, gamma)
    return LocationTargets(loc, scores, scaled)


def label_locations_fcos(centers, gt: GroundTruth, shrink_factor: float = 1.0) -> np.ndarray:
    """Center-in-box labeling; overlapping boxes resolve to the smaller one.

    ``centers`` is an :class:`AnchorGrid` or (N, 2) image-space points. Each
    box is shrunk about its own center by ``shrink_factor`` before the
    strict containment test.
    """
    if not 0.0 < shrink_factor <= 1.0:
        raise ValueError(f"shrink_factor must be in (0, 1], got {shrink_factor}")
    pts = centers.centers if isinstance(centers, AnchorGrid) else np.asarray(centers, dtype=np.float64)
    labels = np.zeros(pts.shape[0], dtype=np.int64)
    if len(gt) == 0:
        return labels
    b = gt.boxes
    cx = 0.5 * (b[:, 0] + b[:, 2])
    cy = 0.5 * (b[:, 1] + b[:, 3])
    hw = 0.5 * shrink_factor * (b[:, 2] - b[:, 0])
    hh = 0.5 * shrink_factor * (b[:, 3] - b[:, 1])
    px = pts[:, 0:1]
    py = pts[:, 1:2]
    inside = (px > cx - hw) & (px < cx + hw) & (py > cy - hh) & (py < cy + hh)
    areas = np.where(inside, box_area(b)[None, :], np.inf)
    best = np.argmin(areas, axis=1)  # first minimum: lowest index on equal area
    hit = inside.any(axis=1)
    labels[hit] = gt.classes[best[hit]]
    return labels


def soft_labels(mu, sigma: float) -> np.ndarray:
    """Per-location normalised IoU ``(mu / max_k mu) ** sigma`` over the last axis.

    ``sigma == 0`` is the diagnostic hard-label mode: 1 wherever ``mu > 0``.
    Rows whose maximum is zero map to all zeros.
    """
    mu = np.asarray(mu, dtype=np.float64)
    top = mu.max(axis=-1, keepdims=True)
    ratio = np.zeros_like(mu)
    np.divide(mu, top, out=ratio, where=top > 0)
    if sigma == 0:
        return (ratio > 0).astype(np.float64)
    return np.where(ratio > 0, ratio ** sigma, 0.0)


def build_ac_targets(
    refined_boxes,
    location_labels,
    gt: GroundTruth,
    ac_iou_thresh: float = AC_IOU_THRESH,
    sigma: float = SIGMA,
) -> ACTargets:
    """Anchor-classification targets from boxes after regression.

    For every positive location, each refined anchor is scored against the
    same-class ground truth it overlaps most (matched per anchor). The
    anchor is positive when that IoU reaches ``ac_iou_thresh``.
    """
    if not (0.0 < sigma < 1.0 or sigma == 0):
        raise ValueError(f"sigma must lie in (0, 1) (or 0 for the diagnostic mode), got {sigma}")
    refined = np.asarray(refined_boxes, dtype=np.float64)
    loc = np.asarray(location_labels, dtype=np.int64)
    n, k = refined.shape[:2]
    if loc.shape != (n,):
        raise ValueError(f"location labels shape {loc.shape} does not match {n} locations")
    mu = np.zeros((n, k))
    matched = np.full((n, k), -1, dtype=np.int64)
    pos = np.flatnonzero(loc > 0)
    if pos.size:
        missing = np.setdiff1d(np.unique(loc[pos]), gt.classes)
        if missing.size:
            bad = pos[np.isin(loc[pos], missing)][0]
            raise AssignmentError(
                f"positive location {bad} has label {loc[bad]} but no ground truth of that class"
            )
        ious = pairwise_iou(refined[pos].reshape(-1, 4), gt.boxes).reshape(pos.size, k, len(gt))
        same = gt.classes[None, None, :] == loc[pos][:, None, None]
        ious = np.where(same, ious, -1.0)
        best = np.argmax(ious, axis=2)
        mu[pos] = np.take_along_axis(ious, best[..., None], axis=2)[..., 0]
        matched[pos] = best
    mu_hat = soft_labels(mu, sigma)
    has_overlap = mu.max(axis=1, keepdims=True) > 0
    y_hat = (mu >= ac_iou_thresh) & has_overlap & (loc[:, None] > 0)
    post = np.where(y_hat, loc[:, None], 0)
    return ACTargets(loc, mu, mu_hat, y_hat.astype(np.int64), matched, post)


@dataclass(frozen=True)
class PropositionCheck:
    K: int
    C: int
    gamma: float
    premise: bool  # gamma < 1/K
    passed: bool
    checked: int
    exhaustive: bool
    counterexample: Optional[tuple] = None
    bound_violation: Optional[tuple] = None

    def summary(self) -> str:
        mode = "exhaustive" if self.exhaustive else "sampled"
        status = "PASS" if self.passed else "FAIL"
        line = (
            f"{status} K={self.K} C={self.C} gamma={float(self.gamma):.6g} "
            f"premise={'gamma<1/K' if self.premise else 'gamma>=1/K'} {mode} checked={self.checked}"
        )
        if self.counterexample is not None:
            line += f" counterexample={self.counterexample}"
        if self.bound_violation is not None:
            line += f" bound_violation={self.bound_violation}"
        return line


def _check_assignment(labels, K, C, gamma):
    counts = [0] * (C + 1)
    for c in labels:
        counts[c] += 1
    n_fg = K - counts[0]
    if n_fg == 0:
        return None, None
    s = [Fraction(c, K) for c in counts]
    scaled, label = threshold_move(s, gamma)
    if label == 0:
        return tuple(labels), None
    total = sum(scaled)
    if total == 0:
        return None, None
    norm = [v / total for v in scaled]
    bg_bound = Fraction(1, 1 + n_fg)
    fg_bound = Fraction(max(counts[1:]), 1 + n_fg)
    if gamma < Fraction(1, K) and not (norm[0] < bg_bound and max(norm[1:]) > fg_bound):
        return None, tuple(labels)
    return None, None


def verify_proposition_1(
    K: int,
    C: int,
    gamma,
    max_exhaustive: int = 200_000,
    samples: int = 20_000,
    seed: int = 0,
) -> PropositionCheck:
    """Check that any foreground anchor makes its location positive.

    Enumerates all ``(C+1)**K`` labelings when that is at most
    ``max_exhaustive``, otherwise draws ``samples`` random labelings. Scores
    are exact rationals. When ``gamma < 1/K`` the normalised-score bounds
    (background below ``1/(1+n)``, best foreground above ``n_c/(1+n)``) are
    also checked. The first failing labeling is returned.
    """
    if K < 1 or C < 1:
        raise ValueError("K and C must be >= 1")
    g = gamma if isinstance(gamma, Fraction) else Fraction(gamma)
    premise = g < Fraction(1, K)
    total = (C + 1) ** K
    exhaustive = total <= max_exhaustive
    if exhaustive:
        labelings = itertools.product(range(C + 1), repeat=K)
    else:
        rng = np.random.default_rng(seed)
        # bias toward few foreground anchors, where the claim is tightest
        def _draw():
            for _ in range(samples):
                n_fg = int(rng.integers(1, K + 1)) if rng.random() < 0.5 else 1
                labels = np.zeros(K, dtype=np.int64)
                idx = rng.choice(K, size=n_fg, replace=False)
                labels[idx] = rng.integers(1, C + 1, size=n_fg)
                yield tuple(int(v) for v in labels)
        labelings = _draw()
    checked = 0
    counterexample = None
    violation = None
    for labels in labelings:
        checked += 1
        cex, bad = _check_assignment(labels, K, C, g)
        if cex is not None and counterexample is None:
            counterexample = cex
        if bad is not None and violation is None:
            violation = bad
        if counterexample is not None and violation is not None:
            break
    return PropositionCheck(
        K=K, C=C, gamma=gamma, premise=premise,
        passed=counterexample is None and violation is None,
        checked=checked, exhaustive=exhaustive,
        counterexample=counterexample, bound_violation=violation,
    )
