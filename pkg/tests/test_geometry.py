import numpy as np
import pytest
from hypothesis import given, strategies as st

from semianchor.geometry import (
    AnchorSpec, Box, box_area, build_anchor_grid, grid_for_image, iou, pairwise_iou,
    xywh_to_xyxy, xyxy_to_xywh,
)
from strategies import boxes


def B(a):
    return Box(*map(float, a))


def test_iou_examples():
    assert iou(Box(0, 0, 10, 10), Box(0, 0, 10, 10)) == 1.0
    assert iou(Box(0, 0, 10, 10), Box(20, 20, 30, 30)) == 0.0
    # inter 5*5, union 100 + 100 - 25
    assert iou(Box(0, 0, 10, 10), Box(5, 5, 15, 15)) == pytest.approx(25 / 175, abs=1e-12)


def test_touching_boxes_have_zero_iou():
    assert iou(Box(0, 0, 10, 10), Box(10, 0, 20, 10)) == 0.0


def test_degenerate_union_is_zero():
    assert iou(Box(1, 1, 1, 1), Box(1, 1, 1, 1)) == 0.0


def test_box_validation():
    with pytest.raises(ValueError):
        Box(5, 0, 1, 1)
    with pytest.raises(ValueError):
        Box(0, 0, float("nan"), 1)


def test_xywh_conversion():
    assert Box.from_xywh(10, 10, 20, 30) == Box(10, 10, 30, 40)
    a = np.array([[10.0, 10, 20, 30]])
    assert np.array_equal(xywh_to_xyxy(a), [[10, 10, 30, 40]])
    assert np.array_equal(xyxy_to_xywh(xywh_to_xyxy(a)), a)


@given(boxes(), boxes())
def test_iou_symmetric_and_bounded(a, b):
    v = iou(B(a), B(b))
    assert v == iou(B(b), B(a))
    assert 0.0 <= v <= 1.0


@given(boxes())
def test_self_iou_is_one(a):
    assert iou(B(a), B(a)) == pytest.approx(1.0, abs=1e-12)


@given(boxes(), boxes(), st.floats(-50, 50), st.floats(-50, 50), st.floats(0.25, 4))
def test_iou_translation_and_scale_invariant(a, b, dx, dy, s):
    shift = np.array([dx, dy, dx, dy])
    base = iou(B(a), B(b))
    assert iou(B(a + shift), B(b + shift)) == pytest.approx(base, abs=1e-9)
    assert iou(B(a * s), B(b * s)) == pytest.approx(base, abs=1e-9)


@given(st.lists(boxes(), min_size=1, max_size=6), st.lists(boxes(), min_size=1, max_size=6))
def test_pairwise_matches_scalar(xs, ys):
    m = pairwise_iou(np.array(xs), np.array(ys))
    for i, a in enumerate(xs):
        for j, b in enumerate(ys):
            assert m[i, j] == pytest.approx(iou(B(a), B(b)), abs=1e-12)


def test_anchor_counts():
    spec = AnchorSpec(5, 5)
    assert spec.K == 25
    grid = build_anchor_grid(spec, [(3, 2)])
    assert grid.num_anchors == 150
    assert grid.anchors.shape == (6, 25, 4)


def test_single_anchor_centered_on_cell():
    spec = AnchorSpec(1, 1, base_sizes=(16,), strides=(8,))
    grid = build_anchor_grid(spec, [(1, 1)])
    a = grid.anchors[0, 0]
    assert np.allclose([(a[0] + a[2]) / 2, (a[1] + a[3]) / 2], [4.0, 4.0])
    assert np.allclose(a, [-4, -4, 12, 12])


@pytest.mark.parametrize("scales,aspects", [(1, 1), (3, 3), (5, 5), (2, 5)])
def test_anchor_centres_and_areas(scales, aspects):
    spec = AnchorSpec.fpn(scales, aspects)
    grid = grid_for_image(spec, 200, 120)
    a = grid.anchors
    ctr = np.stack([(a[..., 0] + a[..., 2]) / 2, (a[..., 1] + a[..., 3]) / 2], axis=-1)
    assert np.allclose(ctr, grid.centers[:, None, :])
    for lvl in range(spec.num_levels):
        sizes = spec.scale_sizes(lvl)
        expected = np.repeat(sizes ** 2, aspects)
        rows = grid.level == lvl
        assert np.allclose(box_area(a[rows]), expected[None, :])


def test_aspect_ratio_is_height_over_width():
    shapes = AnchorSpec(1, 3).shapes()
    assert np.allclose(shapes[:, 1] / shapes[:, 0], [0.5, 1.0, 2.0])


def test_grid_layout_level_major_row_major():
    spec = AnchorSpec(1, 1, base_sizes=(8, 16), strides=(8, 16))
    grid = build_anchor_grid(spec, [(3, 2), (2, 1)])
    assert grid.level.tolist() == [0] * 6 + [1] * 2
    assert grid.row[:6].tolist() == [0, 0, 0, 1, 1, 1]
    assert grid.col[:6].tolist() == [0, 1, 2, 0, 1, 2]
    assert np.allclose(grid.centers[6:], [[8, 8], [24, 8]])
    assert np.allclose(grid.strides, [8] * 6 + [16] * 2)


def test_grid_for_image_uses_ceil():
    grid = grid_for_image(AnchorSpec(1, 1), 17, 8)
    assert grid.level_dims == ((3, 1),)


@pytest.mark.parametrize("kwargs", [
    dict(num_scales=0), dict(num_aspects=2), dict(strides=(16, 8), base_sizes=(1, 2)),
    dict(strides=(8,), base_sizes=(1, 2)), dict(strides=(0,), base_sizes=(1,)),
])
def test_spec_validation(kwargs):
    with pytest.raises(ValueError):
        AnchorSpec(**kwargs)


def test_zero_size_level_rejected():
    with pytest.raises(ValueError):
        build_anchor_grid(AnchorSpec(1, 1), [(0, 3)])
    with pytest.raises(ValueError):
        build_anchor_grid(AnchorSpec(1, 1), [(1, 1), (1, 1)])
