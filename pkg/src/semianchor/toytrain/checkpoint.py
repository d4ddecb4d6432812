"""Plain-text parameter dumps.

Layout::

    semianchor-toy-checkpoint 1
    num_classes 3
    W_loc 3 10
    <one value per line, %.17g>
    ...

``%.17g`` round-trips every float64 exactly, so a reloaded model is
bit-identical to the saved one.
"""
from __future__ import annotations

import numpy as np

from ..io import atomic_write_text
from .model import PARAM_NAMES, ToyModel

MAGIC = "semianchor-toy-checkpoint"
VERSION = 1


class CheckpointError(ValueError):
    pass


def dumps(model: ToyModel) -> str:
    lines = [f"{MAGIC} {VERSION}", f"num_classes {model.num_classes}"]
    for name, value in model.params().items():
        value = np.asarray(value, dtype=np.float64)
        lines.append(" ".join([name, *map(str, value.shape)]))
        lines.extend("%.17g" % v for v in value.ravel())
    return "\n".join(lines) + "\n"


def loads(text: str) -> ToyModel:
    lines = text.splitlines()
    if not lines or lines[0].split()[:1] != [MAGIC]:
        raise CheckpointError("not a toy-model checkpoint")
    version = int(lines[0].split()[1])
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 2
    params = {}
    for name in PARAM_NAMES:
        head = lines[pos].split()
        if head[0] != name:
            raise CheckpointError(f"expected parameter {name}, found {head[0]!r} on line {pos + 1}")
        shape = tuple(int(s) for s in head[1:])
        size = int(np.prod(shape)) if shape else 1
        vals = np.array([float(v) for v in lines[pos + 1:pos + 1 + size]])
        if vals.size != size:
            raise CheckpointError(f"truncated values for {name}")
        params[name] = vals.reshape(shape)
        pos += 1 + size
    return ToyModel(**params)


def save(model: ToyModel, path) -> None:
    atomic_write_text(path, dumps(model))


def load(path) -> ToyModel:
    with open(path, encoding="utf-8") as f:
        return loads(f.read())
