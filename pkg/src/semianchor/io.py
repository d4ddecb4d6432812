"""Annotation loading, run configuration and line-oriented text artifacts.

Annotation files are a subset of COCO ``instances`` JSON::

    images[]:      {id, width, height}
    annotations[]: {image_id, category_id, bbox: [x, y, w, h]}
    categories[]:  {id, name}

Category ids are mapped to contiguous classes 1..C in ascending id order.

Detection files have one detection per line, columns
``image_id category_id x y w h score``; target dumps are documented in
``format_targets``. Floats are written with 6 significant digits.
"""
from __future__ import annotations

import json
import logging
import math
import os
import tempfile
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .assignment import AC_IOU_THRESH, BG_THRESH, FG_THRESH, SIGMA, GroundTruth
from .geometry import AnchorSpec, xywh_to_xyxy, xyxy_to_xywh
from .inference import Detections, InferenceConfig
from .losses import LossConfig

LOG_ENV = "SEMIANCHOR_LOG"
logger = logging.getLogger("semianchor")


def configure_logging(level: Optional[str] = None) -> None:
    """Log to stderr at ``level`` or ``$SEMIANCHOR_LOG`` (default WARNING)."""
    name = (level or os.environ.get(LOG_ENV) or "WARNING").upper()
    value = logging.getLevelName(name)
    if not isinstance(value, int):
        raise ValueError(f"unknown log level {name!r} (from {LOG_ENV})")
    logging.basicConfig(level=value, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("semianchor").setLevel(value)


def atomic_write_text(path, text: str) -> None:
    """Write via a temporary file in the same directory and rename over ``path``."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _g(v) -> str:
    return f"{float(v):.6g}"


# --- annotations ---------------------------------------------------------

class AnnotationError(ValueError):
    """An annotation file violates the documented schema."""


@dataclass(frozen=True)
class ImageInfo:
    id: int
    width: int
    height: int


@dataclass(frozen=True)
class Category:
    id: int
    name: str


@dataclass(frozen=True)
class Annotation:
    image_id: int
    category_id: int
    box: tuple  # (x1, y1, x2, y2)


@dataclass(frozen=True)
class AnnotationSet:
    images: tuple
    annotations: tuple
    categories: tuple
    dropped: int = 0

    @property
    def num_classes(self) -> int:
        return len(self.categories)

    def class_of(self, category_id: int) -> int:
        for i, c in enumerate(self.categories):
            if c.id == category_id:
                return i + 1
        raise KeyError(category_id)

    def category_of(self, cls: int) -> int:
        return self.categories[int(cls) - 1].id

    def ground_truth(self) -> dict:
        """``{image_id: GroundTruth}`` with contiguous classes; every image is present."""
        cls = {c.id: i + 1 for i, c in enumerate(self.categories)}
        per = {im.id: ([], []) for im in self.images}
        for a in self.annotations:
            per[a.image_id][0].append(a.box)
            per[a.image_id][1].append(cls[a.category_id])
        return {img: GroundTruth(np.array(b, dtype=np.float64).reshape(-1, 4), np.array(c, dtype=np.int64))
                for img, (b, c) in per.items()}


def _field(record, key, kind, where):
    if not isinstance(record, dict) or key not in record:
        raise AnnotationError(f"{where}: missing field {key!r}")
    v = record[key]
    if kind is int:
        if isinstance(v, bool) or not isinstance(v, (int, float)) or float(v) != int(v):
            raise AnnotationError(f"{where}: field {key!r} must be an integer, got {v!r}")
        return int(v)
    if kind is str:
        if not isinstance(v, str):
            raise AnnotationError(f"{where}: field {key!r} must be a string")
        return v
    return v


def parse_annotations(data) -> AnnotationSet:
    """Validate a decoded annotation document; see the module docstring."""
    if not isinstance(data, dict):
        raise AnnotationError("annotation document must be a JSON object")
    for key in ("images", "annotations", "categories"):
        if not isinstance(data.get(key), list):
            raise AnnotationError(f"missing list {key!r}")

    images = {}
    for i, rec in enumerate(data["images"]):
        where = f"images[{i}]"
        img = ImageInfo(_field(rec, "id", int, where), _field(rec, "width", int, where),
                        _field(rec, "height", int, where))
        if img.width <= 0 or img.height <= 0:
            raise AnnotationError(f"{where}: image {img.id} has non-positive size")
        if img.id in images:
            raise AnnotationError(f"{where}: duplicate image id {img.id}")
        images[img.id] = img

    cats = {}
    for i, rec in enumerate(data["categories"]):
        where = f"categories[{i}]"
        cat = Category(_field(rec, "id", int, where), _field(rec, "name", str, where))
        if cat.id in cats:
            raise AnnotationError(f"{where}: duplicate category id {cat.id}")
        cats[cat.id] = cat

    anns, dropped = [], 0
    for i, rec in enumerate(data["annotations"]):
        where = f"annotations[{i}]"
        img = _field(rec, "image_id", int, where)
        cat = _field(rec, "category_id", int, where)
        if img not in images:
            raise AnnotationError(f"{where}: unknown image id {img}")
        if cat not in cats:
            raise AnnotationError(f"{where}: unknown category id {cat}")
        bbox = _field(rec, "bbox", None, where)
        try:
            bbox = [float(v) for v in bbox]
        except (TypeError, ValueError):
            raise AnnotationError(f"{where}: bbox must be four numbers") from None
        if len(bbox) != 4 or not all(math.isfinite(v) for v in bbox):
            raise AnnotationError(f"{where}: bbox must be four finite numbers")
        if bbox[2] <= 0 or bbox[3] <= 0:
            dropped += 1
            continue
        anns.append(Annotation(img, cat, tuple(float(v) for v in xywh_to_xyxy(bbox))))
    if dropped:
        logger.warning("dropped %d annotation(s) with non-positive width or height", dropped)

    # sorted so that record order in the file never matters
    anns.sort(key=lambda a: (a.image_id, a.category_id, a.box))
    return AnnotationSet(
        tuple(images[k] for k in sorted(images)),
        tuple(anns),
        tuple(cats[k] for k in sorted(cats)),
        dropped,
    )


def load_annotations(path) -> AnnotationSet:
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise AnnotationError(f"{path}: not valid JSON ({e.msg}, line {e.lineno})") from None
    return parse_annotations(data)


# --- run configuration ---------------------------------------------------

class ConfigError(ValueError):
    """Bad key or value in a run configuration file."""


def _unit(v):
    return 0.0 <= v <= 1.0


@dataclass(frozen=True)
class RunConfig:
    """Every tunable of a run; defaults are the reference settings."""

    num_scales: int = 5
    num_aspects: int = 5
    anchor_levels: str = "fpn"  # "fpn" (strides 8..128) or "single" (stride 8)
    fg_thresh: float = FG_THRESH
    bg_thresh: float = BG_THRESH
    ac_iou_thresh: float = AC_IOU_THRESH
    gamma: Optional[float] = None  # None: simplified labeling
    sigma: float = SIGMA
    alpha_loc: float = 0.25
    beta_loc: float = 1.0
    alpha_ac: float = 0.25
    beta_ac: float = 2.0
    lambda_reg: float = 2.0
    lambda_ac: float = 1.0
    iou_loss: str = "log"
    strategy: str = "top_k"
    k: int = 1
    tau: float = 0.1
    nms_iou_thresh: float = 0.5
    pre_nms_score_thresh: float = 0.05
    max_detections: int = 100
    seed: int = 0
    annotations: str = ""
    output: str = ""

    def __post_init__(self):
        checks = {
            "num_scales": self.num_scales >= 1,
            "num_aspects": self.num_aspects in (1, 3, 5),
            "anchor_levels": self.anchor_levels in ("fpn", "single"),
            "fg_thresh": 0.0 < self.fg_thresh <= 1.0,
            "bg_thresh": 0.0 <= self.bg_thresh <= self.fg_thresh,
            "ac_iou_thresh": 0.0 < self.ac_iou_thresh <= 1.0,
            "gamma": self.gamma is None or 0.0 < self.gamma < 1.0,
            "sigma": self.sigma == 0.0 or 0.0 < self.sigma < 1.0,
            "alpha_loc": 0.0 < self.alpha_loc < 1.0,
            "beta_loc": self.beta_loc >= 0.0,
            "alpha_ac": 0.0 < self.alpha_ac < 1.0,
            "beta_ac": self.beta_ac >= 0.0,
            "lambda_reg": self.lambda_reg >= 0.0,
            "lambda_ac": self.lambda_ac >= 0.0,
            "iou_loss": self.iou_loss in ("log", "linear"),
            "strategy": self.strategy in ("top_k", "pos"),
            "k": self.k >= 1,
            "tau": _unit(self.tau),
            "nms_iou_thresh": _unit(self.nms_iou_thresh),
            "pre_nms_score_thresh": _unit(self.pre_nms_score_thresh),
            "max_detections": self.max_detections >= 1,
            "seed": self.seed >= 0,
        }
        for key, ok in checks.items():
            if not ok:
                raise ConfigError(f"{key}: value {getattr(self, key)!r} out of range")

    def anchor_spec(self) -> AnchorSpec:
        if self.anchor_levels == "fpn":
            return AnchorSpec.fpn(self.num_scales, self.num_aspects)
        return AnchorSpec(self.num_scales, self.num_aspects)

    def loss_config(self) -> LossConfig:
        return LossConfig(alpha_loc=self.alpha_loc, beta_loc=self.beta_loc, alpha_ac=self.alpha_ac,
                          beta_ac=self.beta_ac, sigma=self.sigma, lambda_reg=self.lambda_reg,
                          lambda_ac=self.lambda_ac, iou_loss=self.iou_loss)

    def inference_config(self) -> InferenceConfig:
        return InferenceConfig(self.strategy, self.k, self.tau, self.nms_iou_thresh,
                               self.pre_nms_score_thresh, self.max_detections)


_CONFIG_FIELDS = {f.name: f for f in fields(RunConfig)}
_INT_KEYS = {"num_scales", "num_aspects", "k", "max_detections", "seed"}
_STR_KEYS = {"anchor_levels", "iou_loss", "strategy", "annotations", "output"}


def _parse_value(key, raw):
    if key == "gamma":
        if raw == "simplified":
            return None
        key_kind = float
    elif key in _STR_KEYS:
        return raw
    else:
        key_kind = int if key in _INT_KEYS else float
    try:
        value = key_kind(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {key_kind.__name__}") from None
    if key_kind is float and not math.isfinite(value):
        raise ConfigError(f"{key}: value must be finite")
    return value


def parse_config(text: str) -> RunConfig:
    """``key = value`` lines; ``#`` starts a comment; omitted keys take defaults."""
    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _CONFIG_FIELDS:
            raise ConfigError(f"{key}: unknown key (line {n})")
        if key in values:
            raise ConfigError(f"{key}: given twice (line {n})")
        values[key] = _parse_value(key, raw)
    return RunConfig(**values)


def format_config(cfg: RunConfig) -> str:
    lines = []
    for name in _CONFIG_FIELDS:
        v = getattr(cfg, name)
        if name == "gamma" and v is None:
            v = "simplified"
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{name} = {v}")
    return "\n".join(lines) + "\n"


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as f:
        return parse_config(f.read())


def save_config(cfg: RunConfig, path) -> None:
    atomic_write_text(path, format_config(cfg))


# --- text artifacts --------------------------------------------------------

def format_targets(image_id: int, location_labels, anchor_labels, max_iou) -> list:
    """Target-dump lines for one image.

    ``L image_id location label`` for every positive location, then
    ``A image_id location anchor label max_iou`` for every foreground anchor.
    """
    loc = np.asarray(location_labels)
    alab = np.asarray(anchor_labels)
    miou = np.asarray(max_iou)
    lines = [f"L {image_id} {i} {int(loc[i])}" for i in np.flatnonzero(loc > 0)]
    for i, k in zip(*np.nonzero(alab > 0)):
        lines.append(f"A {image_id} {i} {k} {int(alab[i, k])} {_g(miou[i, k])}")
    return lines


def format_detections(dets: Detections, categories: Optional[AnnotationSet] = None) -> str:
    order = dets.order()
    xywh = xyxy_to_xywh(dets.boxes) if len(dets) else np.zeros((0, 4))
    lines = []
    for i in order:
        cat = categories.category_of(dets.classes[i]) if categories else int(dets.classes[i])
        x, y, w, h = xywh[i]
        lines.append(f"{int(dets.image_id[i])} {cat} {_g(x)} {_g(y)} {_g(w)} {_g(h)} {_g(dets.scores[i])}")
    return "".join(line + "\n" for line in lines)


def write_detections(path, dets: Detections, categories: Optional[AnnotationSet] = None) -> None:
    atomic_write_text(path, format_detections(dets, categories))


def _detections_from_rows(rows, categories):
    if not rows:
        return Detections.empty()
    arr = np.array(rows, dtype=np.float64).reshape(-1, 7)
    cls = arr[:, 1].astype(np.int64)
    if categories is not None:
        try:
            cls = np.array([categories.class_of(int(c)) for c in cls], dtype=np.int64)
        except KeyError as e:
            raise AnnotationError(f"detection with unknown category id {e.args[0]}") from None
    n = arr.shape[0]
    return Detections(xywh_to_xyxy(arr[:, 2:6]), arr[:, 6], cls, np.arange(n), np.zeros(n, dtype=np.int64),
                      arr[:, 0].astype(np.int64))


def read_detections(path, categories: Optional[AnnotationSet] = None) -> Detections:
    """Read the text format, or a COCO results JSON list."""
    with open(path, encoding="utf-8") as f:
        text = f.read()
    rows = []
    if text.lstrip().startswith("["):
        for i, rec in enumerate(json.loads(text)):
            try:
                rows.append([rec["image_id"], rec["category_id"], *rec["bbox"], rec["score"]])
            except (KeyError, TypeError):
                raise AnnotationError(f"detections[{i}]: needs image_id, category_id, bbox, score") from None
    else:
        for n, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 7:
                raise AnnotationError(f"{path}:{n}: expected 7 columns, got {len(parts)}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                raise AnnotationError(f"{path}:{n}: non-numeric column") from None
    if any(r[4] <= 0 or r[5] <= 0 for r in rows):
        raise AnnotationError("detection with non-positive width or height")
    return _detections_from_rows(rows, categories)


HEAD_KEYS = ("loc_probs", "anchor_probs", "refined")


def load_head_outputs(path) -> list:
    """Head outputs from an ``.npz`` file as ``[(image_id, loc_probs, anchor_probs, refined)]``.

    Arrays are ``loc_probs`` (N, C), ``anchor_probs`` (N, K) and ``refined``
    (N, K, 4), optionally with a leading image axis and an ``image_ids``
    vector.
    """
    with np.load(path) as data:
        missing = [k for k in HEAD_KEYS if k not in data]
        if missing:
            raise ValueError(f"{path}: missing arrays {missing}")
        lp, ap, rb = (np.asarray(data[k], dtype=np.float64) for k in HEAD_KEYS)
        ids = np.asarray(data["image_ids"]) if "image_ids" in data else None
    if lp.ndim == 2:
        lp, ap, rb = lp[None], ap[None], rb[None]
    if ids is None:
        ids = np.arange(lp.shape[0])
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    if not (lp.shape[:2] == ap.shape[:2] == rb.shape[:2] and rb.shape[2:] == (ap.shape[2], 4)
            and ids.shape[0] == lp.shape[0]):
        raise ValueError(f"{path}: inconsistent head-output shapes {lp.shape}, {ap.shape}, {rb.shape}")
    for name, a in zip(HEAD_KEYS, (lp, ap)):
        if np.any((a < 0) | (a > 1)) or not np.all(np.isfinite(a)):
            raise ValueError(f"{path}: {name} must be probabilities in [0, 1]")
    return [(int(ids[i]), lp[i], ap[i], rb[i]) for i in range(lp.shape[0])]
