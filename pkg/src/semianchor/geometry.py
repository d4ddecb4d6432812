"""Boxes, IoU and anchor grids.

Boxes use continuous corner coordinates ``(x1, y1, x2, y2)`` with
``area = (x2 - x1) * (y2 - y1)`` (no +1 pixel convention). Array-valued
helpers take ``(..., 4)`` float arrays in the same layout.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels

# aspect ratio = height / width; anchors keep constant area across ratios
ASPECT_RATIOS = {
    1: (1.0,),
    3: (0.5, 1.0, 2.0),
    5: (1.0 / 3.0, 0.5, 1.0, 2.0, 3.0),
}

DEFAULT_STRIDES = (8,)
DEFAULT_BASE_SIZES = (32.0,)
FPN_STRIDES = (8, 16, 32, 64, 128)
FPN_BASE_SIZES = (32.0, 64.0, 128.0, 256.0, 512.0)


@dataclass(frozen=True)
class Box:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(np.isfinite(c) for c in coords):
            raise ValueError(f"non-finite box coordinates {coords}")
        if self.x2 < self.x1 or self.y2 < self.y1:
            raise ValueError(f"box corners out of order: {coords}")

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    def as_array(self) -> np.ndarray:
        return np.array([self.x1, self.y1, self.x2, self.y2], dtype=np.float64)

    @classmethod
    def from_xywh(cls, x, y, w, h) -> "Box":
        return cls(float(x), float(y), float(x) + float(w), float(y) + float(h))


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes; 0 when the union is empty."""
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    inter = max(iw, 0.0) * max(ih, 0.0)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def box_area(boxes) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=np.float64)
    return (boxes[..., 2] - boxes[..., 0]) * (boxes[..., 3] - boxes[..., 1])


def pairwise_iou(a, b) -> np.ndarray:
    """(N, M) IoU matrix between two box arrays."""
    return kernels.pairwise_iou(a, b)


def xywh_to_xyxy(boxes) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=np.float64)
    out = boxes.copy()
    out[..., 2] = boxes[..., 0] + boxes[..., 2]
    out[..., 3] = boxes[..., 1] + boxes[..., 3]
    return out


def xyxy_to_xywh(boxes) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=np.float64)
    out = boxes.copy()
    out[..., 2] = boxes[..., 2] - boxes[..., 0]
    out[..., 3] = boxes[..., 3] - boxes[..., 1]
    return out


@dataclass(frozen=True)
class AnchorSpec:
    """K = num_scales * num_aspects anchors per location, on one or more levels."""

    num_scales: int = 5
    num_aspects: int = 5
    base_sizes: tuple = DEFAULT_BASE_SIZES
    strides: tuple = DEFAULT_STRIDES

    def __post_init__(self):
        if self.num_scales < 1:
            raise ValueError("num_scales must be >= 1")
        if self.num_aspects not in ASPECT_RATIOS:
            raise ValueError(
                f"num_aspects must be one of {sorted(ASPECT_RATIOS)}, got {self.num_aspects}"
            )
        object.__setattr__(self, "base_sizes", tuple(float(s) for s in self.base_sizes))
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        if len(self.strides) == 0 or len(self.strides) != len(self.base_sizes):
            raise ValueError("strides and base_sizes must be non-empty and of equal length")
        if any(s <= 0 for s in self.strides) or any(b <= 0 for b in self.base_sizes):
            raise ValueError("strides and base sizes must be positive")
        if any(nxt <= cur for cur, nxt in zip(self.strides, self.strides[1:])):
            raise ValueError(f"strides must be strictly increasing, got {self.strides}")

    @property
    def K(self) -> int:
        return self.num_scales * self.num_aspects

    @property
    def num_levels(self) -> int:
        return len(self.strides)

    @property
    def aspect_ratios(self) -> tuple:
        return ASPECT_RATIOS[self.num_aspects]

    def scale_sizes(self, level: int = 0) -> np.ndarray:
        """Anchor side lengths ``base * 2**(j / num_scales)`` for one level."""
        j = np.arange(self.num_scales, dtype=np.float64)
        return self.base_sizes[level] * 2.0 ** (j / self.num_scales)

    def shapes(self, level: int = 0) -> np.ndarray:
        """(K, 2) anchor widths and heights, scale-major then aspect."""
        out = []
        for size in self.scale_sizes(level):
            for ratio in self.aspect_ratios:
                r = np.sqrt(ratio)
                out.append((size / r, size * r))
        return np.asarray(out, dtype=np.float64)

    @classmethod
    def fpn(cls, num_scales=5, num_aspects=5) -> "AnchorSpec":
        return cls(num_scales, num_aspects, FPN_BASE_SIZES, FPN_STRIDES)


@dataclass(frozen=True)
class AnchorGrid:
    """All anchors of an image, flattened level-major then row-major.

    ``anchors`` is (num_locations, K, 4); ``centers`` (num_locations, 2);
    ``level``/``row``/``col`` give each location's position.
    """

    spec: AnchorSpec
    level_dims: tuple
    anchors: np.ndarray = field(repr=False)
    centers: np.ndarray = field(repr=False)
    level: np.ndarray = field(repr=False)
    row: np.ndarray = field(repr=False)
    col: np.ndarray = field(repr=False)

    @property
    def K(self) -> int:
        return self.spec.K

    @property
    def num_locations(self) -> int:
        return self.anchors.shape[0]

    @property
    def num_anchors(self) -> int:
        return self.anchors.shape[0] * self.anchors.shape[1]

    @property
    def strides(self) -> np.ndarray:
        return np.asarray(self.spec.strides, dtype=np.float64)[self.level]


def build_anchor_grid(spec: AnchorSpec, level_dims: Sequence[tuple]) -> AnchorGrid:
    """Place K anchors at the center of every feature-map cell.

    ``level_dims`` holds one ``(width, height)`` pair in cells per level.
    """
    level_dims = tuple((int(w), int(h)) for w, h in level_dims)
    if len(level_dims) != spec.num_levels:
        raise ValueError(
            f"got {len(level_dims)} level dims for {spec.num_levels} configured strides"
        )
    anchors, centers, levels, rows, cols = [], [], [], [], []
    for lvl, ((w, h), stride) in enumerate(zip(level_dims, spec.strides)):
        if w <= 0 or h <= 0:
            raise ValueError(f"feature map at level {lvl} has zero size ({w}x{h})")
        rr, cc = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
        rr = rr.ravel()
        cc = cc.ravel()
        ctr = np.stack([(cc + 0.5) * stride, (rr + 0.5) * stride], axis=1)
        shapes = spec.shapes(lvl)
        half = 0.5 * shapes
        a = np.empty((ctr.shape[0], spec.K, 4))
        a[..., 0] = ctr[:, None, 0] - half[None, :, 0]
        a[..., 1] = ctr[:, None, 1] - half[None, :, 1]
        a[..., 2] = ctr[:, None, 0] + half[None, :, 0]
        a[..., 3] = ctr[:, None, 1] + half[None, :, 1]
        anchors.append(a)
        centers.append(ctr)
        levels.append(np.full(ctr.shape[0], lvl, dtype=np.int64))
        rows.append(rr.astype(np.int64))
        cols.append(cc.astype(np.int64))
    return AnchorGrid(
        spec=spec,
        level_dims=level_dims,
        anchors=np.concatenate(anchors),
        centers=np.concatenate(centers),
        level=np.concatenate(levels),
        row=np.concatenate(rows),
        col=np.concatenate(cols),
    )


def grid_for_image(spec: AnchorSpec, width: float, height: float) -> AnchorGrid:
    """Anchor grid covering a ``width`` x ``height`` image (ceil division per level)."""
    dims = [
        (max(1, int(np.ceil(width / s))), max(1, int(np.ceil(height / s))))
        for s in spec.strides
    ]
    return build_anchor_grid(spec, dims)
