"""Both kernel backends agree exactly and the environment flag picks one."""
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st

from semianchor import kernels
from strategies import box_arrays

nb = kernels.numba_backend
npb = kernels.numpy_backend
pytestmark = pytest.mark.skipif(nb is None, reason="numba not installed")


@given(box_arrays(0, 15), box_arrays(0, 15))
def test_pairwise_iou_backends_identical(a, b):
    assert np.array_equal(nb.pairwise_iou(a, b), npb.pairwise_iou(a, b))


@given(box_arrays(0, 25), st.integers(0, 10_000), st.floats(0.0, 1.0), st.integers(1, 30))
def test_nms_backends_identical(boxes, seed, thresh, max_keep):
    classes = np.random.default_rng(seed).integers(0, 3, boxes.shape[0])
    assert np.array_equal(nb.greedy_nms_keep(boxes, classes, thresh, max_keep),
                          npb.greedy_nms_keep(boxes, classes, thresh, max_keep))


@given(st.integers(0, 12), st.integers(0, 8), st.integers(0, 10_000), st.floats(0.3, 1.0))
def test_match_backends_identical(n_det, n_gt, seed, thresh):
    rng = np.random.default_rng(seed)
    ious = np.round(rng.uniform(0, 1, (n_det, n_gt)), 1)  # rounding creates ties
    ignore = np.sort(rng.random(n_gt) < 0.3)
    for x, y in zip(nb.greedy_match(ious, ignore, thresh), npb.greedy_match(ious, ignore, thresh)):
        assert np.array_equal(x, y)


def test_match_prefers_regular_ground_truth():
    ious = np.array([[0.6, 0.9]])
    match, ign = npb.greedy_match(ious, np.array([False, True]), 0.5)
    assert match.tolist() == [0] and not ign[0]


def test_match_ties_go_to_later_ground_truth():
    match, _ = npb.greedy_match(np.array([[0.7, 0.7]]), np.array([False, False]), 0.5)
    assert match.tolist() == [1]


def _backend_in_subprocess(flag):
    env = dict(os.environ)
    env.pop("SEMIANCHOR_DISABLE_NUMBA", None)
    if flag is not None:
        env["SEMIANCHOR_DISABLE_NUMBA"] = flag
    out = subprocess.run([sys.executable, "-c", "from semianchor import kernels; print(kernels.BACKEND_NAME)"],
                         env=env, capture_output=True, text=True, check=True)
    return out.stdout.strip()


def test_env_flag_selects_backend():
    assert _backend_in_subprocess(None) == "numba"
    assert _backend_in_subprocess("1") == "numpy"
    assert _backend_in_subprocess("0") == "numba"
