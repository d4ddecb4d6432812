"""Deterministic SGD training of the toy model on synthetic scenes."""
from __future__ import annotations

import math
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from ..assignment import (
    AC_IOU_THRESH,
    BG_THRESH,
    FG_THRESH,
    ACTargets,
    assign_locations,
    build_ac_targets,
    label_anchors,
    label_locations_fcos,
)
from ..evaluation import EvalReport, map_report
from ..geometry import pairwise_iou
from ..inference import (
    Detections,
    InferenceConfig,
    nms,
    postprocess,
    select_anchors,
    select_random_anchor,
)
from ..losses import LossConfig, LossReport, anchor_cls_loss, iou_loss, location_cls_loss, total_loss
from .data import NUM_CLASSES, default_toy_spec, generate_dataset
from .model import ToyModel, backward, forward, forward_arrays

logger = logging.getLogger(__name__)

ASSIGNERS = ("semi", "fcos", "fcos-shrink")
TEST_SEED_OFFSET = 10_000


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    steps: int = 300
    lr: float = 0.05
    momentum: float = 0.9
    clip_norm: Optional[float] = 2.0  # global gradient norm cap; None disables
    batch_size: Optional[int] = None  # None: full batch
    num_images: int = 16
    num_test_images: int = 16
    difficulty: int = 1
    num_classes: int = NUM_CLASSES
    num_scales: int = 5
    num_aspects: int = 5
    assigner: str = "semi"
    gamma: Optional[float] = None  # None: the gamma-free rule
    shrink_factor: float = 0.5
    fg_thresh: float = FG_THRESH
    bg_thresh: float = BG_THRESH
    ac_iou_thresh: float = AC_IOU_THRESH
    ac_head: bool = True
    loss: LossConfig = field(default_factory=LossConfig)
    inference: InferenceConfig = field(default_factory=InferenceConfig)

    def __post_init__(self):
        if self.steps < 1 or self.lr <= 0:
            raise ValueError("steps and lr must be positive")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive or None")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")
        if self.assigner not in ASSIGNERS:
            raise ValueError(f"assigner must be one of {ASSIGNERS}, got {self.assigner!r}")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @property
    def anchor_spec(self):
        return default_toy_spec(self.num_scales, self.num_aspects)


@dataclass(frozen=True)
class SceneTargets:
    """Targets fixed by ground truth and anchors (no dependence on the model)."""

    anchor_labels: np.ndarray  # (N, K) pre-regression classes
    location_labels: np.ndarray  # (N,)
    reg_mask: np.ndarray  # (N, K) anchors that incur the IoU loss
    reg_boxes: np.ndarray  # (N, K, 4) regression targets (valid where reg_mask)


def static_targets(scene, cfg: TrainConfig) -> SceneTargets:
    grid, gt = scene.grid, scene.gt
    alab = label_anchors(grid, gt, cfg.fg_thresh, cfg.bg_thresh)
    if cfg.assigner == "semi":
        loc = assign_locations(alab, scene.num_classes, cfg.gamma).labels
    else:
        shrink = 1.0 if cfg.assigner == "fcos" else cfg.shrink_factor
        loc = label_locations_fcos(grid, gt, shrink)
    n, k = grid.num_locations, grid.K
    reg_mask = np.zeros((n, k), dtype=bool)
    reg_boxes = np.zeros((n, k, 4))
    pos = np.flatnonzero(loc > 0)
    if pos.size:
        ious = pairwise_iou(grid.anchors[pos].reshape(-1, 4), gt.boxes).reshape(pos.size, k, len(gt))
        ious = np.where(gt.classes[None, None, :] == loc[pos][:, None, None], ious, -1.0)
        best = np.argmax(ious, axis=2)
        best_iou = np.take_along_axis(ious, best[..., None], axis=2)[..., 0]
        reg_mask[pos] = best_iou > 0
        reg_boxes[pos] = gt.boxes[best]
    return SceneTargets(alab.labels, loc, reg_mask, reg_boxes)


@dataclass
class Objective:
    report: LossReport
    grads: dict
    ac_targets: list
    outputs: list


def _stack(scenes, targets):
    x = np.concatenate([s.x for s in scenes])
    # anchor-side losses only see positive locations
    rows = [np.flatnonzero(t.location_labels > 0) for t in targets]
    z = np.concatenate([s.z[r] for s, r in zip(scenes, rows)])
    anchors = np.concatenate([s.grid.anchors[r] for s, r in zip(scenes, rows)])
    return x, z, anchors, rows


def objective(model: ToyModel, scenes, targets, cfg: TrainConfig,
              ac_targets: Optional[list] = None) -> Objective:
    """Total loss and parameter gradients over a batch.

    Anchor-classification targets are rebuilt from the current refined boxes
    unless ``ac_targets`` is given; either way they are constants for the
    gradient. Returned AC targets cover positive locations only, in batch
    order.
    """
    x, z, anchors, rows = _stack(scenes, targets)
    out = forward_arrays(model, x, z, anchors)
    labels = np.concatenate([t.location_labels for t in targets])
    pos_labels = np.concatenate([t.location_labels[r] for t, r in zip(targets, rows)])
    splits = np.cumsum([r.size for r in rows])[:-1]

    if ac_targets is None:
        ac_targets = [
            build_ac_targets(ref, t.location_labels[r], s.gt, cfg.ac_iou_thresh, cfg.loss.sigma)
            for ref, t, s, r in zip(np.split(out.refined, splits), targets, scenes, rows)
        ]
    lc = cfg.loss
    l_cls, g_loc = location_cls_loss(out.loc_probs, labels, lc)

    reg_mask = np.concatenate([t.reg_mask[r] for t, r in zip(targets, rows)])
    reg_boxes = np.concatenate([t.reg_boxes[r] for t, r in zip(targets, rows)])
    g_ref = np.zeros_like(out.refined)
    n_reg = int(reg_mask.sum())
    l_reg = 0.0
    if n_reg:
        vals, g = iou_loss(out.refined[reg_mask], reg_boxes[reg_mask], lc.iou_eps, lc.iou_loss)
        l_reg = float(vals.sum()) / n_reg
        g_ref[reg_mask] = g / n_reg

    g_ac = np.zeros_like(out.anchor_probs)
    l_ac = 0.0
    n_anchor_pos = sum(t.num_positive_anchors for t in ac_targets)
    if cfg.ac_head:
        mu_hat = np.concatenate([t.mu_hat for t in ac_targets])
        y_hat = np.concatenate([t.y_hat for t in ac_targets])
        l_ac, g_ac = anchor_cls_loss(out.anchor_probs, mu_hat, y_hat, pos_labels, lc)
        lam_ac = lc.lambda_ac
    else:
        lam_ac = 0.0
    report = total_loss(l_cls, l_reg, l_ac, replace(lc, lambda_ac=lam_ac),
                        int(np.count_nonzero(labels > 0)), n_anchor_pos)
    if not np.isfinite(report.total):
        raise FloatingPointError("non-finite training loss")
    grads = backward(model, x, z, out, g_loc, lc.lambda_reg * g_ref, lam_ac * g_ac)
    return Objective(report, grads, ac_targets, [out])


class SGD:
    """SGD with heavy-ball momentum; state is a dict of velocity arrays.

    With ``clip_norm`` set, the gradient is rescaled so its global L2 norm
    never exceeds it. Without this the bilinear regression path (tower times
    regression head) can run away when no anchor-classifier loss shapes the
    tower.
    """

    def __init__(self, lr: float, momentum: float = 0.9, clip_norm: Optional[float] = None):
        self.lr = lr
        self.momentum = momentum
        self.clip_norm = clip_norm
        self.velocity = {}

    def step(self, model: ToyModel, grads: dict) -> ToyModel:
        if self.clip_norm is not None:
            norm = math.sqrt(sum(float(np.sum(np.square(g))) for g in grads.values()))
            if norm > self.clip_norm:
                grads = {k: g * (self.clip_norm / norm) for k, g in grads.items()}
        new = {}
        for name, value in model.params().items():
            v = self.velocity.get(name)
            v = grads[name] if v is None else self.momentum * v + grads[name]
            self.velocity[name] = v
            new[name] = value - self.lr * v
        return ToyModel(**new)


def train_step(model: ToyModel, batch, cfg: TrainConfig, optimizer: Optional[SGD] = None,
               targets: Optional[list] = None):
    """One SGD step on the total loss; returns ``(new_model, LossReport)``."""
    optimizer = optimizer or SGD(cfg.lr, 0.0)
    targets = targets if targets is not None else [static_targets(s, cfg) for s in batch]
    obj = objective(model, batch, targets, cfg)
    return optimizer.step(model, obj.grads), obj.report


@dataclass
class TrainResult:
    model: ToyModel
    reports: list
    config: TrainConfig


def train(cfg: TrainConfig, scenes=None, log: Optional[Callable[[int, LossReport], None]] = None,
          model: Optional[ToyModel] = None) -> TrainResult:
    """Run ``cfg.steps`` SGD steps; ``log(step, report)`` sees every step."""
    if scenes is None:
        scenes = generate_dataset(cfg.seed, cfg.num_images, cfg.difficulty, cfg.anchor_spec,
                                  cfg.num_classes)
    targets = [static_targets(s, cfg) for s in scenes]
    model = model.copy() if model is not None else ToyModel.init(cfg.num_classes)
    opt = SGD(cfg.lr, cfg.momentum, cfg.clip_norm)
    rng = np.random.default_rng([cfg.seed, 1])
    n = len(scenes)
    bs = n if cfg.batch_size is None else min(cfg.batch_size, n)
    order = np.arange(n)
    reports = []
    pos = n
    for step in range(1, cfg.steps + 1):
        if bs == n:
            idx = order
        else:
            if pos + bs > n:
                order = rng.permutation(n)
                pos = 0
            idx = order[pos:pos + bs]
            pos += bs
        obj = objective(model, [scenes[i] for i in idx], [targets[i] for i in idx], cfg)
        model = opt.step(model, obj.grads)
        reports.append(obj.report)
        if log is not None:
            log(step, obj.report)
    return TrainResult(model, reports, cfg)


def test_scenes(cfg: TrainConfig):
    return generate_dataset(cfg.seed + TEST_SEED_OFFSET, cfg.num_test_images, cfg.difficulty,
                            cfg.anchor_spec, cfg.num_classes)


def ground_truth_map(scenes) -> dict:
    return {s.image_id: s.gt for s in scenes}


def detect(model: ToyModel, scenes, infer: InferenceConfig, mode: str = "ac",
           rng: Optional[np.random.Generator] = None, pre_nms: bool = False) -> Detections:
    """Detections over ``scenes``.

    ``mode="ac"`` scores anchors with the anchor classifier; ``"random"``
    keeps one random anchor per location scored by the location alone;
    ``"shared"`` forces every anchor probability to 1.
    """
    parts = []
    for s in scenes:
        out = forward(model, s)
        if mode == "random":
            cand = select_random_anchor(out.loc_probs, out.refined, rng, infer, s.image_id)
            parts.append(cand if pre_nms else nms(cand, infer.nms_iou_thresh, infer.max_detections))
            continue
        probs = np.ones_like(out.anchor_probs) if mode == "shared" else out.anchor_probs
        if pre_nms:
            parts.append(select_anchors(out.loc_probs, probs, out.refined, infer, s.image_id))
        else:
            parts.append(postprocess(out.loc_probs, probs, out.refined, infer, s.image_id))
    return Detections.concat(parts)


def evaluate(model: ToyModel, scenes, infer: InferenceConfig, mode: str = "ac",
             rng: Optional[np.random.Generator] = None) -> EvalReport:
    dets = detect(model, scenes, infer, mode, rng)
    return map_report(dets, ground_truth_map(scenes), area_breakdown=False)
