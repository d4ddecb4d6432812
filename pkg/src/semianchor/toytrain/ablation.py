"""Paired-seed ablations of the toy detector.

Every setting of an axis is trained and evaluated with the same seeds, so
differences between settings come from the setting alone.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from ..inference import InferenceConfig
from ..losses import LossConfig
from .train import TrainConfig, evaluate, test_scenes, train

AXES = ("ac_head", "strategy", "sigma", "gamma", "K", "assigner")
NO_AC_REPEATS = 10

DEFAULT_VALUES = {
    "ac_head": (True, False),
    "strategy": (InferenceConfig("top_k", k=1), InferenceConfig("top_k", k=2),
                 InferenceConfig("pos", tau=0.1), InferenceConfig("pos", tau=0.5)),
    "sigma": (0.5, 0.9, 0.0),
    "gamma": (None, 0.2),
    "K": ((1, 1), (3, 3), (5, 5)),
    "assigner": ("semi", "fcos", "fcos-shrink"),
}


@dataclass(frozen=True)
class AblationRow:
    setting: str
    seed: int
    ap: float
    ap50: float
    ap75: float


@dataclass(frozen=True)
class AblationResult:
    axis: str
    settings: tuple
    rows: tuple
    seconds: float

    def values(self, setting: str) -> np.ndarray:
        return np.array([r.ap for r in self.rows if r.setting == setting])

    def mean(self, setting: str) -> float:
        return float(self.values(setting).mean())

    def paired(self, better: str, worse: str) -> np.ndarray:
        """Per-seed AP differences ``better - worse``."""
        a = {r.seed: r.ap for r in self.rows if r.setting == better}
        b = {r.seed: r.ap for r in self.rows if r.setting == worse}
        return np.array([a[s] - b[s] for s in sorted(a)])

    def table(self) -> str:
        seeds = sorted({r.seed for r in self.rows})
        width = max(len(s) for s in self.settings + ("setting",))
        head = f"{'setting':<{width}}  " + "  ".join(f"seed{s:<4d}" for s in seeds) + "      mean"
        lines = [f"axis: {self.axis}", head]
        for name in self.settings:
            vals = {r.seed: r.ap for r in self.rows if r.setting == name}
            cells = "  ".join(f"{vals[s]:8.4f}" for s in seeds)
            lines.append(f"{name:<{width}}  {cells}  {self.mean(name):8.4f}")
        return "\n".join(lines)


def _label(axis, value) -> str:
    if axis == "ac_head":
        return "AC head" if value else f"no AC (best of {NO_AC_REPEATS})"
    if axis == "strategy":
        return value.label()
    if axis == "sigma":
        return f"sigma={value:g}"
    if axis == "gamma":
        return "simplified" if value is None else f"gamma={value:g}"
    if axis == "K":
        return f"K={value[0] * value[1]}"
    return value


def _configure(axis, value, cfg: TrainConfig) -> TrainConfig:
    if axis == "ac_head":
        return replace(cfg, ac_head=bool(value))
    if axis == "sigma":
        return replace(cfg, loss=replace(cfg.loss, sigma=float(value)))
    if axis == "gamma":
        return replace(cfg, gamma=value)
    if axis == "K":
        return replace(cfg, num_scales=value[0], num_aspects=value[1])
    if axis == "assigner":
        return replace(cfg, assigner=value)
    return cfg


def _row(setting, seed, report) -> AblationRow:
    return AblationRow(setting, seed, report.ap, report.ap50, report.ap75)


def run_ablation(axis: str, cfg: Optional[TrainConfig] = None, seeds: Sequence[int] = (0, 1, 2),
                 values: Optional[Sequence] = None) -> AblationResult:
    """Train and evaluate every setting of ``axis`` for each seed.

    The no-AC baseline picks one random anchor per location and scores it
    with the location probability; the best of ``NO_AC_REPEATS`` draws is
    reported. The strategy axis trains once per seed and only varies
    inference.
    """
    if axis not in AXES:
        raise ValueError(f"unknown ablation axis {axis!r}; choose from {AXES}")
    cfg = cfg or TrainConfig()
    values = tuple(DEFAULT_VALUES[axis] if values is None else values)
    settings = tuple(_label(axis, v) for v in values)
    rows = []
    start = time.perf_counter()
    for seed in seeds:
        base = replace(cfg, seed=int(seed))
        if axis == "strategy":
            model = train(base).model
            scenes = test_scenes(base)
            for v, name in zip(values, settings):
                rows.append(_row(name, seed, evaluate(model, scenes, v)))
            continue
        for v, name in zip(values, settings):
            run = _configure(axis, v, base)
            model = train(run).model
            scenes = test_scenes(run)
            if axis == "ac_head" and not v:
                reports = [evaluate(model, scenes, run.inference, "random", np.random.default_rng([seed, r]))
                           for r in range(NO_AC_REPEATS)]
                rows.append(_row(name, seed, max(reports, key=lambda r: r.ap)))
            else:
                rows.append(_row(name, seed, evaluate(model, scenes, run.inference)))
    return AblationResult(axis, settings, tuple(rows), time.perf_counter() - start)
