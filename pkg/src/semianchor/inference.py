"""From head outputs to detections.

A detection's score is the location's class probability times the anchor
classifier's probability. Anchors are picked per location (Top-k or a
probability threshold) and then filtered with greedy class-wise NMS.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, NamedTuple

import numpy as np

from . import kernels
from .geometry import Box


@dataclass(frozen=True)
class InferenceConfig:
    strategy: str = "top_k"  # "top_k" or "pos"
    k: int = 1
    tau: float = 0.1
    nms_iou_thresh: float = 0.5
    pre_nms_score_thresh: float = 0.05
    max_detections: int = 100

    def __post_init__(self):
        if self.strategy not in ("top_k", "pos"):
            raise ValueError(f"strategy must be 'top_k' or 'pos', got {self.strategy!r}")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        for name in ("tau", "nms_iou_thresh", "pre_nms_score_thresh"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.max_detections < 1:
            raise ValueError("max_detections must be >= 1")

    def label(self) -> str:
        return f"Top-{self.k}" if self.strategy == "top_k" else f"Pos(tau={self.tau:g})"


class Detection(NamedTuple):
    box: Box
    cls: int
    score: float
    location: int
    anchor: int
    image_id: int


@dataclass(frozen=True)
class Detections:
    """Column-oriented detection list."""

    boxes: np.ndarray
    scores: np.ndarray
    classes: np.ndarray
    location: np.ndarray
    anchor: np.ndarray
    image_id: np.ndarray

    def __post_init__(self):
        n = np.asarray(self.scores).shape[0]
        object.__setattr__(self, "boxes", np.asarray(self.boxes, dtype=np.float64).reshape(n, 4))
        object.__setattr__(self, "scores", np.asarray(self.scores, dtype=np.float64))
        for name in ("classes", "location", "anchor", "image_id"):
            col = np.asarray(getattr(self, name), dtype=np.int64).reshape(-1)
            if col.shape[0] != n:
                raise ValueError(f"column {name} has {col.shape[0]} rows, expected {n}")
            object.__setattr__(self, name, col)

    @classmethod
    def build(cls, boxes, scores, classes, location=None, anchor=None, image_id=0):
        scores = np.asarray(scores, dtype=np.float64).reshape(-1)
        n = scores.shape[0]
        location = np.arange(n) if location is None else location
        anchor = np.zeros(n, dtype=np.int64) if anchor is None else anchor
        image_id = np.broadcast_to(np.asarray(image_id, dtype=np.int64), (n,))
        return cls(boxes, scores, classes, location, anchor, image_id)

    @classmethod
    def empty(cls) -> "Detections":
        z = np.zeros(0, dtype=np.int64)
        return cls(np.zeros((0, 4)), np.zeros(0), z, z, z, z)

    @classmethod
    def concat(cls, parts) -> "Detections":
        parts = list(parts)
        if not parts:
            return cls.empty()
        return cls(*(np.concatenate([getattr(p, f) for p in parts])
                     for f in ("boxes", "scores", "classes", "location", "anchor", "image_id")))

    def __len__(self) -> int:
        return self.scores.shape[0]

    def __iter__(self) -> Iterator[Detection]:
        for i in range(len(self)):
            yield Detection(Box(*self.boxes[i]), int(self.classes[i]), float(self.scores[i]),
                            int(self.location[i]), int(self.anchor[i]), int(self.image_id[i]))

    def take(self, idx) -> "Detections":
        idx = np.asarray(idx, dtype=np.int64)
        return Detections(self.boxes[idx], self.scores[idx], self.classes[idx],
                          self.location[idx], self.anchor[idx], self.image_id[idx])

    def order(self) -> np.ndarray:
        """Descending score; ties by (image, location, anchor, class) ascending."""
        return np.lexsort((self.classes, self.anchor, self.location, self.image_id, -self.scores))

    def keys(self) -> set:
        """Hashable identities ``(image, location, anchor, class)`` for set comparisons."""
        return set(zip(self.image_id.tolist(), self.location.tolist(),
                       self.anchor.tolist(), self.classes.tolist()))


def factorized_scores(loc_probs, anchor_probs) -> np.ndarray:
    """score[i, k, c] = P(location i is class c) * P(anchor k keeps that label)."""
    loc_probs = np.asarray(loc_probs, dtype=np.float64)
    anchor_probs = np.asarray(anchor_probs, dtype=np.float64)
    return anchor_probs[:, :, None] * loc_probs[:, None, :]


def _anchor_mask(anchor_probs, cfg: InferenceConfig) -> np.ndarray:
    anchor_probs = np.asarray(anchor_probs, dtype=np.float64)
    if cfg.strategy == "pos":
        return anchor_probs >= cfg.tau
    n, k = anchor_probs.shape
    # stable sort so equal probabilities keep the lower anchor index
    order = np.argsort(-anchor_probs, axis=1, kind="stable")[:, : min(cfg.k, k)]
    mask = np.zeros((n, k), dtype=bool)
    np.put_along_axis(mask, order, True, axis=1)
    return mask


def _emit(scores, refined, mask, thresh, image_id):
    scores = np.where(mask[:, :, None], scores, -1.0)
    loc, anc, cls = np.nonzero(scores >= thresh)
    return Detections(refined[loc, anc], scores[loc, anc, cls], cls + 1, loc, anc,
                      np.full(loc.shape[0], image_id, dtype=np.int64))


def select_anchors(loc_probs, anchor_probs, refined_boxes, cfg: InferenceConfig = InferenceConfig(),
                   image_id: int = 0) -> Detections:
    """Pre-NMS candidates; classes in the output are 1-based."""
    refined = np.asarray(refined_boxes, dtype=np.float64)
    scores = factorized_scores(loc_probs, anchor_probs)
    mask = _anchor_mask(anchor_probs, cfg)
    return _emit(scores, refined, mask, cfg.pre_nms_score_thresh, image_id)


def select_random_anchor(loc_probs, refined_boxes, rng: np.random.Generator,
                         cfg: InferenceConfig = InferenceConfig(), image_id: int = 0) -> Detections:
    """No-anchor-classifier baseline: one random anchor per location, scored by the location."""
    loc_probs = np.asarray(loc_probs, dtype=np.float64)
    refined = np.asarray(refined_boxes, dtype=np.float64)
    n, k = refined.shape[:2]
    pick = rng.integers(0, k, size=n)
    mask = np.zeros((n, k), dtype=bool)
    mask[np.arange(n), pick] = True
    scores = np.broadcast_to(loc_probs[:, None, :], (n, k, loc_probs.shape[1]))
    return _emit(scores, refined, mask, cfg.pre_nms_score_thresh, image_id)


def nms(dets: Detections, iou_thresh: float = 0.5, max_detections: int | None = None) -> Detections:
    """Greedy class-wise NMS; output is sorted by descending score."""
    if not np.all(np.isfinite(dets.scores)):
        raise ValueError("NMS needs finite scores")
    if len(dets) == 0:
        return dets
    ordered = dets.take(dets.order())
    limit = len(dets) if max_detections is None else int(max_detections)
    # classes from different images must never suppress each other
    _, groups = np.unique(np.stack([ordered.classes, ordered.image_id], axis=1), axis=0,
                          return_inverse=True)
    groups = groups.reshape(-1)
    keep = kernels.greedy_nms_keep(ordered.boxes, groups, float(iou_thresh), limit)
    return ordered.take(keep)


def postprocess(loc_probs, anchor_probs, refined_boxes, cfg: InferenceConfig = InferenceConfig(),
                image_id: int = 0) -> Detections:
    """select_anchors followed by NMS and truncation, for one image."""
    cand = select_anchors(loc_probs, anchor_probs, refined_boxes, cfg, image_id)
    return nms(cand, cfg.nms_iou_thresh, cfg.max_detections)
