"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The backend is picked once at import time. Set ``SEMIANCHOR_DISABLE_NUMBA=1``
to force the numpy path; numba is also skipped when it cannot be imported.
Both backends are importable directly as ``kernels.numpy_backend`` and
``kernels.numba_backend`` (the latter is ``None`` without numba).
"""
import logging
import os

from . import _numpy as numpy_backend

logger = logging.getLogger(__name__)

_FLAG = "SEMIANCHOR_DISABLE_NUMBA"


def _numba_requested():
    return os.environ.get(_FLAG, "").strip().lower() not in ("1", "true", "yes", "on")


try:
    from . import _numba as numba_backend
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba_backend = None

if numba_backend is not None and _numba_requested():
    backend = numba_backend
    BACKEND_NAME = "numba"
else:
    backend = numpy_backend
    BACKEND_NAME = "numpy"

logger.debug("semianchor kernels using %s backend", BACKEND_NAME)

pairwise_iou = backend.pairwise_iou
greedy_nms_keep = backend.greedy_nms_keep
greedy_match = backend.greedy_match

__all__ = [
    "BACKEND_NAME",
    "greedy_match",
    "greedy_nms_keep",
    "numba_backend",
    "numpy_backend",
    "pairwise_iou",
]
