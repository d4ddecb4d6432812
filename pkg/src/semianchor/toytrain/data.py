"""Synthetic detection scenes with engineered per-location and per-anchor features.

Stands in for an image backbone: each location gets a feature vector
``x_i`` describing the object it sits on (class evidence, relative
position, object extent) and each anchor gets ``z_ik = [x_i, anchor
descriptors]``. The anchor descriptors include a noisy estimate of the
corner offsets to the object whose noise grows with the anchor/object shape
mismatch, so regression quality depends on which anchor is used.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..assignment import GroundTruth
from ..geometry import AnchorGrid, AnchorSpec, grid_for_image, pairwise_iou

IMAGE_SIZE = 128
NUM_CLASSES = 3
OFFSET_SCALE = 16.0  # pixels per unit of regression output
REF_SIZE = 32.0
SIZE_RANGE = (26.0, 62.0)  # sqrt(area) of ground-truth boxes
MAX_OBJECTS = 6
MAX_GT_OVERLAP = 0.3

# per-feature noise at difficulty 1
LOC_NOISE = 0.05
OFFSET_NOISE = 1.0
FIT_NOISE = 0.05

_GT_STREAM, _LOC_STREAM, _ANCHOR_STREAM = 0, 1, 2


def default_toy_spec(num_scales=5, num_aspects=5) -> AnchorSpec:
    return AnchorSpec(num_scales, num_aspects, base_sizes=(REF_SIZE,), strides=(8,))


def location_feature_dim(num_classes: int) -> int:
    return num_classes + 7


def anchor_feature_dim(num_classes: int) -> int:
    return location_feature_dim(num_classes) + 8


@dataclass(frozen=True)
class SyntheticScene:
    image_id: int
    width: int
    height: int
    gt: GroundTruth
    grid: AnchorGrid = field(repr=False)
    x: np.ndarray = field(repr=False)  # (N, Dx)
    z: np.ndarray = field(repr=False)  # (N, K, Dz)
    num_classes: int = NUM_CLASSES


def _aspect_centres(num_classes):
    # one preferred height/width ratio per class, spread over [1/2.2, 2.2]
    if num_classes == 1:
        return np.array([1.0])
    return np.exp(np.linspace(np.log(1 / 2.2), np.log(2.2), num_classes))


def _sample_box(rng, cls, num_classes, width, height, centred=False):
    size = rng.uniform(*SIZE_RANGE)
    ratio = _aspect_centres(num_classes)[cls - 1] * np.exp(rng.uniform(-0.35, 0.35))
    w = size / np.sqrt(ratio)
    h = size * np.sqrt(ratio)
    w = min(w, width - 2.0)
    h = min(h, height - 2.0)
    if centred:
        cx, cy = width / 2.0, height / 2.0
    else:
        cx = rng.uniform(w / 2, width - w / 2)
        cy = rng.uniform(h / 2, height - h / 2)
    return np.array([cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2])


def sample_ground_truth(rng, difficulty, num_classes, width, height) -> GroundTruth:
    if difficulty <= 0:
        cls = int(rng.integers(1, num_classes + 1))
        return GroundTruth(_sample_box(rng, cls, num_classes, width, height, centred=True)[None], [cls])
    n = int(rng.integers(1, MAX_OBJECTS + 1))
    boxes, classes = [], []
    for _ in range(50 * n):
        if len(boxes) == n:
            break
        cls = int(rng.integers(1, num_classes + 1))
        b = _sample_box(rng, cls, num_classes, width, height)
        if boxes and pairwise_iou(b[None], np.array(boxes)).max() > MAX_GT_OVERLAP:
            continue
        boxes.append(b)
        classes.append(cls)
    return GroundTruth(np.array(boxes), np.array(classes))


def _seen_object(centers, gt: GroundTruth, margin: float):
    """Index of the object each location sits on (-1 for none) and its normalised offset."""
    n = centers.shape[0]
    if len(gt) == 0:
        return np.full(n, -1), np.zeros((n, 2))
    b = gt.boxes
    gx = 0.5 * (b[:, 0] + b[:, 2])
    gy = 0.5 * (b[:, 1] + b[:, 3])
    w = b[:, 2] - b[:, 0]
    h = b[:, 3] - b[:, 1]
    px = centers[:, 0:1]
    py = centers[:, 1:2]
    inside = (px > b[:, 0] - margin) & (px < b[:, 2] + margin) & (py > b[:, 1] - margin) & (py < b[:, 3] + margin)
    dx = (px - gx) / w
    dy = (py - gy) / h
    rho = np.where(inside, dx ** 2 + dy ** 2, np.inf)
    seen = np.argmin(rho, axis=1)
    seen = np.where(np.isfinite(rho.min(axis=1)), seen, -1)
    rows = np.arange(n)
    off = np.stack([dx[rows, np.maximum(seen, 0)], dy[rows, np.maximum(seen, 0)]], axis=1)
    off[seen < 0] = 0.0
    return seen, off


def scene_features(gt: GroundTruth, grid: AnchorGrid, num_classes: int, rng_loc, rng_anchor,
                   noise_scale: float = 1.0):
    """Per-location (N, Dx) and per-anchor (N, K, Dz) features for one image."""
    n, k = grid.num_locations, grid.K
    seen, off = _seen_object(grid.centers, gt, margin=float(grid.spec.strides[0]))
    has = seen >= 0
    idx = np.maximum(seen, 0)
    if len(gt):
        boxes = gt.boxes[idx]
        cls = gt.classes[idx]
    else:
        boxes = np.zeros((n, 4))
        cls = np.zeros(n, dtype=np.int64)
    bw = np.maximum(boxes[:, 2] - boxes[:, 0], 1e-6)
    bh = np.maximum(boxes[:, 3] - boxes[:, 1], 1e-6)
    rho = np.sqrt((off ** 2).sum(axis=1))

    x = np.zeros((n, location_feature_dim(num_classes)))
    evidence = np.where(has, np.maximum(0.0, 1.0 - 2.0 * rho), 0.0)
    x[np.arange(n)[has], cls[has] - 1] = evidence[has]
    c = num_classes
    x[:, c] = has
    x[:, c + 1] = np.where(has, np.abs(off[:, 0]), 1.0)
    x[:, c + 2] = np.where(has, np.abs(off[:, 1]), 1.0)
    x[:, c + 3] = np.where(has, np.log(bw / REF_SIZE), 0.0)
    x[:, c + 4] = np.where(has, np.log(bh / REF_SIZE), 0.0)
    x[:, c + 5] = np.where(has, np.abs(np.log(bw / bh)), 0.0)
    x[:, c + 6] = np.where(has, np.abs(0.5 * np.log(bw * bh) - np.log(REF_SIZE)), 0.0)
    x += rng_loc.normal(0.0, LOC_NOISE * noise_scale, size=x.shape)

    anchors = grid.anchors
    aw = anchors[..., 2] - anchors[..., 0]
    ah = anchors[..., 3] - anchors[..., 1]
    mismatch = np.abs(np.log(aw / bw[:, None])) + np.abs(np.log(ah / bh[:, None]))
    offsets = (boxes[:, None, :] - anchors) / OFFSET_SCALE
    spread = OFFSET_NOISE * noise_scale * (0.15 + mismatch)
    offsets = offsets + rng_anchor.normal(size=(n, k, 4)) * spread[..., None]
    if len(gt):
        fit = pairwise_iou(anchors.reshape(-1, 4), gt.boxes).reshape(n, k, len(gt))
        fit = np.take_along_axis(fit, idx[:, None, None].repeat(k, axis=1), axis=2)[..., 0]
    else:
        fit = np.zeros((n, k))
    fit = fit + rng_anchor.normal(0.0, FIT_NOISE * noise_scale, size=(n, k))

    z = np.zeros((n, k, anchor_feature_dim(num_classes)))
    dx = x.shape[1]
    z[..., :dx] = x[:, None, :]
    z[..., dx] = np.log(aw / REF_SIZE)
    z[..., dx + 1] = np.log(ah / REF_SIZE)
    z[..., dx + 2:dx + 6] = np.where(has[:, None, None], offsets,
                                     rng_anchor.normal(0.0, OFFSET_NOISE * noise_scale, size=(n, k, 4)))
    z[..., dx + 6] = np.where(has[:, None], fit, 0.0)
    z[..., dx + 7] = np.where(has[:, None], mismatch, 2.0)
    return x, z


def make_scene(seed: int, index: int, difficulty: int = 1, spec: AnchorSpec | None = None,
               num_classes: int = NUM_CLASSES, image_size: int = IMAGE_SIZE) -> SyntheticScene:
    spec = default_toy_spec() if spec is None else spec
    gt = sample_ground_truth(np.random.default_rng([seed, index, _GT_STREAM]), difficulty,
                             num_classes, image_size, image_size)
    grid = grid_for_image(spec, image_size, image_size)
    noise_scale = 1.0 if difficulty <= 1 else 1.0 + 0.5 * (difficulty - 1)
    x, z = scene_features(gt, grid, num_classes,
                          np.random.default_rng([seed, index, _LOC_STREAM]),
                          np.random.default_rng([seed, index, _ANCHOR_STREAM]),
                          noise_scale)
    return SyntheticScene(index, image_size, image_size, gt, grid, x, z, num_classes)


def generate_dataset(seed: int, num_images: int, difficulty: int = 1, spec: AnchorSpec | None = None,
                     num_classes: int = NUM_CLASSES, image_size: int = IMAGE_SIZE) -> list:
    """``num_images`` scenes, fully determined by ``seed``.

    Difficulty 0 puts a single object at the image centre; difficulty 1 and
    above draws 1-6 objects with growing feature noise. Ground truth does
    not depend on the anchor configuration, so paired runs over different
    ``spec`` values see the same objects.
    """
    if num_images < 1:
        raise ValueError("num_images must be >= 1")
    if not 1 <= num_classes <= 5:
        raise ValueError("num_classes must be in 1..5")
    return [make_scene(seed, i, difficulty, spec, num_classes, image_size) for i in range(num_images)]


def dataset_summary(scenes) -> dict:
    counts = [len(s.gt) for s in scenes]
    num_classes = scenes[0].num_classes if scenes else 0
    hist = np.zeros(num_classes + 1, dtype=np.int64)
    for s in scenes:
        hist += np.bincount(s.gt.classes, minlength=num_classes + 1)
    return {"mean_gt": float(np.mean(counts)), "class_hist": hist[1:].tolist()}


LAYOUT_IMAGE_SIZE = 512
LAYOUT_SIZE_RANGE = (16.0, 320.0)
LAYOUT_ASPECT_RANGE = (1.0 / 3.0, 3.0)
LAYOUT_MAX_OBJECTS = 10


def sample_layout(seed: int, index: int, num_classes: int = NUM_CLASSES,
                  image_size: int = LAYOUT_IMAGE_SIZE) -> GroundTruth:
    """Ground truth only, for label statistics on a full pyramid.

    Object sizes are log-uniform over ``LAYOUT_SIZE_RANGE`` and height/width
    ratios log-uniform over ``LAYOUT_ASPECT_RANGE``, so every pyramid level
    sees objects. No features are generated.
    """
    rng = np.random.default_rng([seed, index, 3])
    n = int(rng.integers(1, LAYOUT_MAX_OBJECTS + 1))
    boxes = []
    for _ in range(n):
        size = np.exp(rng.uniform(*np.log(LAYOUT_SIZE_RANGE)))
        ratio = np.exp(rng.uniform(*np.log(LAYOUT_ASPECT_RANGE)))
        w = min(size / np.sqrt(ratio), image_size - 1.0)
        h = min(size * np.sqrt(ratio), image_size - 1.0)
        x = rng.uniform(0.0, image_size - w)
        y = rng.uniform(0.0, image_size - h)
        boxes.append([x, y, x + w, y + h])
    return GroundTruth(np.array(boxes), rng.integers(1, num_classes + 1, size=n))
