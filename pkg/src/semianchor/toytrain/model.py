"""Three linear heads with a shared anchor projection, and manual backprop.

Location head:  p_loc = sigmoid(x W_loc^T + b_loc)             (N, C)
Anchor tower:   h     = z U^T                                 (N, K, Dz), shared
Regression:     box   = anchor + OFFSET_SCALE * (h W_reg^T + b_reg)
Anchor cls:     p_ac  = sigmoid(h . w_ac + b_ac)               (N, K)

Refined boxes keep a minimum extent of ``MIN_EXTENT`` on each axis by
pushing the far corner out.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import OFFSET_SCALE, anchor_feature_dim, location_feature_dim

MIN_EXTENT = 1e-3
PRIOR_PROB = 0.01

PARAM_NAMES = ("W_loc", "b_loc", "U", "W_reg", "b_reg", "w_ac", "b_ac")


@dataclass
class ToyModel:
    W_loc: np.ndarray
    b_loc: np.ndarray
    U: np.ndarray
    W_reg: np.ndarray
    b_reg: np.ndarray
    w_ac: np.ndarray
    b_ac: np.ndarray

    @classmethod
    def init(cls, num_classes: int, prior: float = PRIOR_PROB) -> "ToyModel":
        """Zero heads, identity anchor tower, classifier biases at ``prior``."""
        dx = location_feature_dim(num_classes)
        dz = anchor_feature_dim(num_classes)
        bias = -np.log((1.0 - prior) / prior)
        return cls(
            W_loc=np.zeros((num_classes, dx)),
            b_loc=np.full(num_classes, bias),
            U=np.eye(dz),
            W_reg=np.zeros((4, dz)),
            b_reg=np.zeros(4),
            w_ac=np.zeros(dz),
            b_ac=np.array(bias),
        )

    @classmethod
    def zeros(cls, num_classes: int) -> "ToyModel":
        dx = location_feature_dim(num_classes)
        dz = anchor_feature_dim(num_classes)
        return cls(np.zeros((num_classes, dx)), np.zeros(num_classes), np.zeros((dz, dz)),
                   np.zeros((4, dz)), np.zeros(4), np.zeros(dz), np.array(0.0))

    @property
    def num_classes(self) -> int:
        return self.W_loc.shape[0]

    def params(self) -> dict:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "ToyModel":
        return ToyModel(**{k: np.array(v, dtype=np.float64, copy=True) for k, v in self.params().items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([np.ravel(v) for v in self.params().values()])

    def with_flat(self, theta) -> "ToyModel":
        theta = np.asarray(theta, dtype=np.float64)
        out, pos = {}, 0
        for name, v in self.params().items():
            size = np.size(v)
            out[name] = theta[pos:pos + size].reshape(np.shape(v)).copy()
            pos += size
        if pos != theta.size:
            raise ValueError(f"expected {pos} parameters, got {theta.size}")
        return ToyModel(**out)


def sigmoid(a):
    # split by sign so large |a| never overflows exp
    a = np.asarray(a, dtype=np.float64)
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    e = np.exp(a[~pos])
    out[~pos] = e / (1.0 + e)
    return out


@dataclass
class ForwardOutput:
    loc_probs: np.ndarray
    refined: np.ndarray
    anchor_probs: np.ndarray
    h: np.ndarray
    raw: np.ndarray


def forward_arrays(model: ToyModel, x, z, anchors) -> ForwardOutput:
    """Head outputs from stacked features; ``z``/``anchors`` may cover a subset of rows."""
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    loc_probs = sigmoid(x @ model.W_loc.T + model.b_loc)
    h = z @ model.U.T
    raw = anchors + OFFSET_SCALE * (h @ model.W_reg.T + model.b_reg)
    refined = raw.copy()
    refined[..., 2] = np.maximum(raw[..., 2], raw[..., 0] + MIN_EXTENT)
    refined[..., 3] = np.maximum(raw[..., 3], raw[..., 1] + MIN_EXTENT)
    anchor_probs = sigmoid(h @ model.w_ac + model.b_ac)
    return ForwardOutput(loc_probs, refined, anchor_probs, h, raw)


def forward(model: ToyModel, scene) -> ForwardOutput:
    """Head outputs for one scene: (N, C) probs, (N, K, 4) boxes, (N, K) probs."""
    if scene.z.shape[-1] != model.U.shape[1] or scene.x.shape[-1] != model.W_loc.shape[1]:
        raise ValueError("model and scene feature sizes disagree")
    return forward_arrays(model, scene.x, scene.z, scene.grid.anchors)


def backward(model: ToyModel, x, z, out: ForwardOutput, d_loc_probs, d_refined, d_anchor_probs) -> dict:
    """Parameter gradients given loss derivatives w.r.t. the three head outputs.

    ``z``, ``d_refined`` and ``d_anchor_probs`` must cover the same rows as
    ``out.h``; rows left out of the anchor forward contribute nothing.
    """
    p = out.loc_probs
    d_a_loc = d_loc_probs * p * (1.0 - p)
    g_W_loc = d_a_loc.T @ x
    g_b_loc = d_a_loc.sum(axis=0)

    raw = out.raw
    d_raw = np.array(d_refined, dtype=np.float64, copy=True)
    # min-extent clamp routes the far-corner gradient to the near corner
    for lo, hi in ((0, 2), (1, 3)):
        clamped = raw[..., hi] < raw[..., lo] + MIN_EXTENT
        if clamped.any():
            d_raw[..., lo] += np.where(clamped, d_raw[..., hi], 0.0)
            d_raw[..., hi] = np.where(clamped, 0.0, d_raw[..., hi])
    dz = z.shape[-1]
    h2 = out.h.reshape(-1, dz)
    d_off2 = OFFSET_SCALE * d_raw.reshape(-1, 4)
    g_W_reg = d_off2.T @ h2
    g_b_reg = d_off2.sum(axis=0)

    q = out.anchor_probs
    d_a_ac = (d_anchor_probs * q * (1.0 - q)).reshape(-1)
    g_w_ac = d_a_ac @ h2
    g_b_ac = np.array(d_a_ac.sum())

    d_h = d_off2 @ model.W_reg + d_a_ac[:, None] * model.w_ac[None, :]
    g_U = d_h.T @ z.reshape(-1, dz)
    return {"W_loc": g_W_loc, "b_loc": g_b_loc, "U": g_U, "W_reg": g_W_reg,
            "b_reg": g_b_reg, "w_ac": g_w_ac, "b_ac": g_b_ac}
