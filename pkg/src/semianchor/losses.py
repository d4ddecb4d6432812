"""Training objectives with hand-derived gradients.

Every loss returns ``(value, grad)`` where ``grad`` is the derivative with
respect to the prediction argument (probabilities or box corners).
Probabilities are clamped to ``[eps, 1 - eps]`` before the logs; the
returned gradient is evaluated at the clamped point.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

PROB_EPS = 1e-7
IOU_EPS = 1e-7


@dataclass(frozen=True)
class LossConfig:
    alpha_loc: float = 0.25
    beta_loc: float = 1.0
    alpha_ac: float = 0.25
    beta_ac: float = 2.0
    sigma: float = 0.9
    lambda_reg: float = 2.0
    lambda_ac: float = 1.0
    prob_eps: float = PROB_EPS
    iou_eps: float = IOU_EPS
    iou_loss: str = "log"  # "log": -ln IoU, "linear": 1 - IoU

    def __post_init__(self):
        for name in ("alpha_loc", "alpha_ac"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        for name in ("beta_loc", "beta_ac", "lambda_reg", "lambda_ac"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not (0.0 < self.sigma < 1.0 or self.sigma == 0):
            raise ValueError(f"sigma must lie in (0, 1), got {self.sigma}")
        if self.prob_eps <= 0 or self.iou_eps <= 0:
            raise ValueError("eps values must be positive")
        if self.iou_loss not in ("log", "linear"):
            raise ValueError(f"iou_loss must be 'log' or 'linear', got {self.iou_loss!r}")


@dataclass(frozen=True)
class LossReport:
    cls: float
    reg: float
    ac: float
    total: float
    num_pos_locations: int
    num_pos_anchors: int

    def format(self, step=None) -> str:
        head = "" if step is None else f"step={step} "
        return (
            f"{head}L_cls={self.cls:.6g} L_reg={self.reg:.6g} L_ac={self.ac:.6g} "
            f"L_total={self.total:.6g} N_loc+={self.num_pos_locations} "
            f"N_anchor+={self.num_pos_anchors}"
        )


def _check_prob(p, eps):
    p = np.asarray(p, dtype=np.float64)
    if np.any(~np.isfinite(p)) or np.any(p < 0.0) or np.any(p > 1.0):
        raise ValueError("probabilities must lie in [0, 1]")
    return np.clip(p, eps, 1.0 - eps)


def _pow(base, exponent):
    # 0 ** 0 == 1 is what both focal branches need
    return np.power(base, exponent)


def _neg_branch(p, alpha, beta):
    """-(1 - alpha) p^beta log(1 - p) and its derivative."""
    log1m = np.log1p(-p)
    pb = _pow(p, beta)
    val = -(1.0 - alpha) * pb * log1m
    dpb = beta * _pow(p, beta - 1.0) if beta != 0 else np.zeros_like(p)
    grad = -(1.0 - alpha) * (dpb * log1m - pb / (1.0 - p))
    return val, grad


def focal_loss(p, y, alpha: float = 0.25, beta: float = 2.0, eps: float = PROB_EPS):
    """Element-wise binary focal loss and its derivative in ``p``.

    Positive targets cost ``-alpha (1-p)^beta log p``, negatives
    ``-(1-alpha) p^beta log(1-p)``.
    """
    p = _check_prob(p, eps)
    y = np.broadcast_to(np.asarray(y), p.shape)
    q = 1.0 - p
    logp = np.log(p)
    qb = _pow(q, beta)
    pos_val = -alpha * qb * logp
    dqb = beta * _pow(q, beta - 1.0) if beta != 0 else np.zeros_like(p)
    pos_grad = alpha * dqb * logp - alpha * qb / p
    neg_val, neg_grad = _neg_branch(p, alpha, beta)
    positive = y > 0
    return np.where(positive, pos_val, neg_val), np.where(positive, pos_grad, neg_grad)


def smoothed_focal_loss(p, mu_hat, y_hat, alpha: float = 0.25, beta: float = 2.0,
                        eps: float = PROB_EPS):
    """Focal loss with a soft positive target ``mu_hat``.

    Positive anchors cost ``-alpha |mu_hat - p|^beta mu_hat log p``; the
    negative branch is the plain focal one. The derivative of
    ``|mu_hat - p|^beta`` is taken as 0 at ``p == mu_hat``.
    """
    p = _check_prob(p, eps)
    mu_hat = np.broadcast_to(np.asarray(mu_hat, dtype=np.float64), p.shape)
    y_hat = np.broadcast_to(np.asarray(y_hat), p.shape)
    if np.any(mu_hat > 1.0) or np.any(mu_hat < 0.0):
        raise ValueError("soft labels must lie in [0, 1]")
    d = p - mu_hat
    ad = np.abs(d)
    logp = np.log(p)
    mod = _pow(ad, beta)
    kink = ad == 0.0
    safe = np.where(kink, 1.0, ad)
    dmod = np.where(kink, 0.0, beta * _pow(safe, beta - 1.0) * np.sign(d)) if beta != 0 else 0.0
    pos_val = -alpha * mod * mu_hat * logp
    pos_grad = -alpha * mu_hat * (dmod * logp + mod / p)
    neg_val, neg_grad = _neg_branch(p, alpha, beta)
    positive = y_hat > 0
    return np.where(positive, pos_val, neg_val), np.where(positive, pos_grad, neg_grad)


def box_iou_with_grad(pred, target):
    """Row-wise IoU of (N, 4) ``pred`` vs ``target`` and dIoU/dpred."""
    pred = np.asarray(pred, dtype=np.float64).reshape(-1, 4)
    target = np.asarray(target, dtype=np.float64).reshape(-1, 4)
    x1, y1, x2, y2 = pred.T
    tx1, ty1, tx2, ty2 = target.T
    pw = x2 - x1
    ph = y2 - y1
    area_p = pw * ph
    area_t = (tx2 - tx1) * (ty2 - ty1)
    iw_raw = np.minimum(x2, tx2) - np.maximum(x1, tx1)
    ih_raw = np.minimum(y2, ty2) - np.maximum(y1, ty1)
    iw = np.maximum(iw_raw, 0.0)
    ih = np.maximum(ih_raw, 0.0)
    inter = iw * ih
    union = area_p + area_t - inter
    iou = np.zeros_like(inter)
    np.divide(inter, union, out=iou, where=union > 0)

    # d(iw)/d(x1) = -1 when pred's left edge is the binding one, etc.
    wpos = iw_raw > 0
    hpos = ih_raw > 0
    zero = np.zeros_like(iw)
    d_iw = np.stack([-(wpos & (x1 > tx1)).astype(np.float64), zero,
                     (wpos & (x2 < tx2)).astype(np.float64), zero], axis=1)
    d_ih = np.stack([zero, -(hpos & (y1 > ty1)).astype(np.float64), zero,
                     (hpos & (y2 < ty2)).astype(np.float64)], axis=1)
    d_inter = d_iw * ih[:, None] + d_ih * iw[:, None]
    d_area = np.stack([-ph, -pw, ph, pw], axis=1)
    d_union = d_area - d_inter
    safe_u = np.where(union > 0, union, 1.0)
    grad = (d_inter * union[:, None] - inter[:, None] * d_union) / (safe_u ** 2)[:, None]
    grad[union <= 0] = 0.0
    return iou, grad


def iou_loss(pred, target, eps: float = IOU_EPS, kind: str = "log"):
    """IoU regression loss per row and its gradient in the four predicted corners.

    ``kind="log"`` gives ``-ln(max(IoU, eps))``; ``kind="linear"`` gives
    ``1 - IoU``. Where the clamp is active the gradient is zero.
    """
    iou, d_iou = box_iou_with_grad(pred, target)
    if kind == "log":
        clamped = iou < eps
        val = -np.log(np.maximum(iou, eps))
        safe = np.where(clamped, 1.0, iou)
        grad = np.where(clamped[:, None], 0.0, -d_iou / safe[:, None])
    elif kind == "linear":
        val = 1.0 - iou
        grad = -d_iou
    else:
        raise ValueError(f"unknown IoU loss kind {kind!r}")
    return val, grad


def one_hot_targets(labels, num_classes: int) -> np.ndarray:
    """(N, C) one-vs-all targets; background rows are all zero."""
    labels = np.asarray(labels, dtype=np.int64)
    return (labels[:, None] == np.arange(1, num_classes + 1)[None, :]).astype(np.float64)


def location_cls_loss(probs, labels, cfg: LossConfig = LossConfig()):
    """Focal loss summed over all locations and classes / #positive locations.

    ``probs`` holds C per-class sigmoid outputs per location. The
    normaliser is floored at 1.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    targets = one_hot_targets(labels, probs.shape[1])
    val, grad = focal_loss(probs, targets, cfg.alpha_loc, cfg.beta_loc, cfg.prob_eps)
    norm = max(1, int(np.count_nonzero(labels > 0)))
    return float(val.sum()) / norm, grad / norm


def anchor_cls_loss(probs, mu_hat, y_hat, location_labels, cfg: LossConfig = LossConfig()):
    """Smoothed focal loss over anchors of positive locations / #positive anchors."""
    probs = np.asarray(probs, dtype=np.float64)
    gate = (np.asarray(location_labels) > 0)[:, None]
    grad = np.zeros_like(probs)
    if not gate.any():
        return 0.0, grad
    val, g = smoothed_focal_loss(probs, mu_hat, y_hat, cfg.alpha_ac, cfg.beta_ac, cfg.prob_eps)
    norm = max(1, int(np.count_nonzero(np.asarray(y_hat)[gate[:, 0]])))
    val = np.where(gate, val, 0.0)
    grad = np.where(gate, g, 0.0) / norm
    return float(val.sum()) / norm, grad


def total_loss(l_cls, l_reg, l_ac, cfg: LossConfig = LossConfig(),
               num_pos_locations: int = 0, num_pos_anchors: int = 0) -> LossReport:
    """Weighted objective ``L_cls + lambda_reg L_reg + lambda_ac L_ac``."""
    for name, v in (("L_cls", l_cls), ("L_reg", l_reg), ("L_ac", l_ac)):
        if not math.isfinite(v):
            raise ValueError(f"{name} is not finite: {v}")
        if v < 0:
            raise ValueError(f"{name} is negative: {v}")
    total = l_cls + cfg.lambda_reg * l_reg + cfg.lambda_ac * l_ac
    return LossReport(float(l_cls), float(l_reg), float(l_ac), float(total),
                      int(num_pos_locations), int(num_pos_anchors))
