"""Central finite-difference checks of every analytic gradient.

Relative error is ``|a - n| / max(|a|, |n|, floor)``: the floor keeps
near-zero derivatives, where round-off dominates the difference, from
producing meaningless ratios.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .assignment import GroundTruth
from .geometry import AnchorSpec, grid_for_image
from .losses import LossConfig, focal_loss, iou_loss, smoothed_focal_loss

STEP = 1e-6
REL_FLOOR = 1e-4
LOSS_TOL = 1e-5
MODEL_TOL = 1e-4
# keep samples this far from kinks so the central difference never straddles one
KINK_MARGIN = 1e-3


@dataclass(frozen=True)
class GradCheckResult:
    name: str
    points: int
    max_rel_err: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.tol

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.points} points, max rel err {self.max_rel_err:.3g} (tol {self.tol:g})"


def rel_err(analytic, numeric, floor: float = REL_FLOOR) -> np.ndarray:
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def central_diff(f, x: np.ndarray, h: float = STEP) -> np.ndarray:
    """Gradient of the scalar ``f`` at ``x`` by central differences."""
    x = np.array(x, dtype=np.float64)
    g = np.empty_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        up = f(x)
        flat[i] = old - h
        down = f(x)
        flat[i] = old
        gf[i] = (up - down) / (2.0 * h)
    return g


def _elementwise_diff(f, p, h=STEP):
    # loss is separable in p, so one vector evaluation per side suffices
    return (f(p + h) - f(p - h)) / (2.0 * h)


FOCAL_SETTINGS = ((0.25, 1.0), (0.25, 2.0), (0.5, 0.0), (0.4, 1.5))


def check_focal(points: int = 200, seed: int = 0) -> GradCheckResult:
    rng = np.random.default_rng([seed, 1])
    worst = 0.0
    per = -(-points // len(FOCAL_SETTINGS))
    for alpha, beta in FOCAL_SETTINGS:
        p = rng.uniform(0.01, 0.99, per)
        y = rng.integers(0, 2, per)
        _, g = focal_loss(p, y, alpha, beta)
        num = _elementwise_diff(lambda q: focal_loss(q, y, alpha, beta)[0], p)
        worst = max(worst, float(rel_err(g, num).max()))
    return GradCheckResult("focal loss", per * len(FOCAL_SETTINGS), worst, LOSS_TOL)


def check_smoothed_focal(points: int = 200, seed: int = 0) -> GradCheckResult:
    rng = np.random.default_rng([seed, 2])
    p = rng.uniform(0.01, 0.99, points)
    mu_hat = rng.uniform(0.0, 1.0, points)
    near = np.abs(p - mu_hat) < KINK_MARGIN
    mu_hat[near] = np.clip(p[near] + 0.1, 0.0, 1.0)
    y_hat = rng.integers(0, 2, points)
    _, g = smoothed_focal_loss(p, mu_hat, y_hat)
    num = _elementwise_diff(lambda q: smoothed_focal_loss(q, mu_hat, y_hat)[0], p)
    return GradCheckResult("smoothed focal loss", points, float(rel_err(g, num).max()), LOSS_TOL)


def _random_box_pairs(rng, n):
    out_p, out_t = [], []
    while len(out_p) < n:
        t = np.array([rng.uniform(0, 20), rng.uniform(0, 20), 0, 0])
        t[2:] = t[:2] + rng.uniform(5, 30, 2)
        p = t + rng.normal(0, 3, 4)
        if p[2] - p[0] < 1 or p[3] - p[1] < 1:
            continue
        # coincident edges or touching boxes are kinks of the IoU
        edges = np.abs(p[:, None] - t[None, :]).min()
        if edges < KINK_MARGIN:
            continue
        iw = min(p[2], t[2]) - max(p[0], t[0])
        ih = min(p[3], t[3]) - max(p[1], t[1])
        if iw < KINK_MARGIN or ih < KINK_MARGIN:
            continue
        out_p.append(p)
        out_t.append(t)
    return np.array(out_p), np.array(out_t)


def check_iou_loss(points: int = 200, seed: int = 0, kind: str = "log") -> GradCheckResult:
    rng = np.random.default_rng([seed, 3])
    pred, target = _random_box_pairs(rng, points)
    _, g = iou_loss(pred, target, kind=kind)
    num = np.empty_like(pred)
    for j in range(4):
        e = np.zeros(4)
        e[j] = STEP
        num[:, j] = (iou_loss(pred + e, target, kind=kind)[0] - iou_loss(pred - e, target, kind=kind)[0]) / (2 * STEP)
    return GradCheckResult(f"IoU loss ({kind})", points, float(rel_err(g, num).max()), LOSS_TOL)


def tiny_instance(seed: int, num_classes: int = 1):
    """One 16x16 image, 2x2 grid, K=2, with a random object on a grid cell."""
    from .toytrain.data import SyntheticScene, scene_features

    rng = np.random.default_rng([seed, 4])
    spec = AnchorSpec(2, 1, base_sizes=(8.0,), strides=(8,))
    grid = grid_for_image(spec, 16, 16)
    cx, cy = grid.centers[rng.integers(0, grid.num_locations)] + rng.uniform(-1, 1, 2)
    w, h = rng.uniform(7, 11, 2)
    gt = GroundTruth([[cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2]], [int(rng.integers(1, num_classes + 1))])
    x, z = scene_features(gt, grid, num_classes, np.random.default_rng([seed, 5]), np.random.default_rng([seed, 6]))
    return SyntheticScene(seed, 16, 16, gt, grid, x, z, num_classes)


def check_model(points: int = 100, seed: int = 0, num_classes: int = 1, full_points: int = 3,
                coords: int = 40, directions: int = 3) -> GradCheckResult:
    """Gradient of the toy L_total, AC targets held fixed at each point.

    Every point gets ``directions`` random directional derivatives (which
    involve all parameters at once) and ``coords`` random coordinates; the
    first ``full_points`` points compare every coordinate.
    """
    from .toytrain.model import ToyModel
    from .toytrain.train import TrainConfig, objective, static_targets

    cfg = TrainConfig(num_classes=num_classes, loss=LossConfig())
    worst = 0.0
    done = 0
    attempt = 0
    while done < points:
        attempt += 1
        scene = tiny_instance(seed * 100_003 + attempt, num_classes)
        targets = [static_targets(scene, cfg)]
        if not np.any(targets[0].location_labels > 0):
            continue
        rng = np.random.default_rng([seed, attempt, 7])
        base = ToyModel.init(num_classes)
        theta = base.flat() + rng.normal(0.0, 0.3, base.flat().size)
        obj = objective(base.with_flat(theta), [scene], targets, cfg)
        frozen = obj.ac_targets
        analytic = np.concatenate([np.ravel(obj.grads[k]) for k in base.params()])

        def f(t):
            return objective(base.with_flat(t), [scene], targets, cfg, frozen).report.total

        if done < full_points:
            worst = max(worst, float(rel_err(analytic, central_diff(f, theta)).max()))
        else:
            for i in rng.choice(theta.size, size=min(coords, theta.size), replace=False):
                e = np.zeros_like(theta)
                e[i] = STEP
                num = (f(theta + e) - f(theta - e)) / (2 * STEP)
                worst = max(worst, float(rel_err(analytic[i], num)))
        for _ in range(directions):
            v = rng.normal(size=theta.size)
            v /= np.linalg.norm(v)
            num = (f(theta + STEP * v) - f(theta - STEP * v)) / (2 * STEP)
            worst = max(worst, float(rel_err(analytic @ v, num)))
        done += 1
    return GradCheckResult("toy model L_total", points, worst, MODEL_TOL)


def run_all(points: int = 100, seed: int = 0) -> list:
    return [
        check_focal(max(points, 100), seed),
        check_smoothed_focal(max(points, 100), seed),
        check_iou_loss(max(points, 100), seed, "log"),
        check_iou_loss(max(points, 100), seed, "linear"),
        check_model(points, seed),
    ]
