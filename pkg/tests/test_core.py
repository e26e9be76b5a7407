from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from socialcues.core import (
    Annotation,
    AnnotationSource,
    BoundingBox,
    CameraIntrinsics,
    ClassRegistry,
    Detection,
    InvalidBoxError,
    RgbdFrame,
    box_from_mask,
    box_from_pixel_set,
    clip_box,
    iou,
    iou_matrix,
)

coord = st.floats(-50, 50, allow_nan=False, width=32)
size = st.floats(0.5, 40, allow_nan=False, width=32)


@st.composite
def boxes(draw):
    x, y, w, h = draw(coord), draw(coord), draw(size), draw(size)
    return BoundingBox(x, y, x + w, y + h)


def area_oracle(a, b):
    # rasterise both boxes on a fine grid; only used on integer boxes
    xs = np.arange(-60, 100) + 0.5
    X, Y = np.meshgrid(xs, xs)
    ina = (X >= a.x_min) & (X < a.x_max) & (Y >= a.y_min) & (Y < a.y_max)
    inb = (X >= b.x_min) & (X < b.x_max) & (Y >= b.y_min) & (Y < b.y_max)
    return (ina & inb).sum() / (ina | inb).sum()


@pytest.mark.parametrize(
    "a,b,expected",
    [
        ((0, 0, 10, 10), (0, 0, 10, 10), 1.0),
        ((0, 0, 10, 10), (20, 20, 30, 30), 0.0),
        ((0, 0, 10, 10), (5, 0, 15, 10), 1 / 3),
        ((0, 0, 10, 10), (10, 0, 20, 10), 0.0),  # touching edges share no area
    ],
)
def test_iou_examples(a, b, expected):
    assert iou(BoundingBox(*a), BoundingBox(*b)) == pytest.approx(expected, abs=1e-12)


def test_box_rejects_zero_area_and_nan():
    with pytest.raises(InvalidBoxError):
        BoundingBox(0, 0, 0, 5)
    with pytest.raises(InvalidBoxError):
        BoundingBox(0, 0, float("nan"), 5)


@given(st.tuples(st.integers(-20, 40), st.integers(-20, 40), st.integers(1, 30), st.integers(1, 30)),
       st.tuples(st.integers(-20, 40), st.integers(-20, 40), st.integers(1, 30), st.integers(1, 30)))
def test_iou_matches_raster_oracle(p, q):
    a = BoundingBox(p[0], p[1], p[0] + p[2], p[1] + p[3])
    b = BoundingBox(q[0], q[1], q[0] + q[2], q[1] + q[3])
    assert iou(a, b) == pytest.approx(area_oracle(a, b), abs=1e-12)


@given(boxes(), boxes())
def test_iou_symmetric_and_bounded(a, b):
    assert iou(a, b) == iou(b, a)
    assert 0.0 <= iou(a, b) <= 1.0


@given(boxes())
def test_iou_self_is_one(a):
    assert iou(a, a) == 1.0


@given(boxes(), boxes(), st.floats(0.05, 1.0))
def test_iou_shrinking_overlap_never_increases(a, b, frac):
    # shrink b towards its far corner, which can only remove overlap with a
    shrunk = BoundingBox(b.x_max - frac * b.width, b.y_min, b.x_max, b.y_max)
    if iou(a, b) == 0.0:
        assert iou(a, shrunk) == 0.0
        return
    inter_full = iou(a, b) * (a.area + b.area) / (1 + iou(a, b))
    inter_shr = iou(a, shrunk) * (a.area + shrunk.area) / (1 + iou(a, shrunk))
    assert inter_shr <= inter_full + 1e-9


@given(st.lists(boxes(), min_size=1, max_size=6), st.lists(boxes(), min_size=1, max_size=6))
def test_iou_matrix_matches_scalar(xs, ys):
    M = iou_matrix(np.array([b.as_tuple() for b in xs]), np.array([b.as_tuple() for b in ys]))
    for i, a in enumerate(xs):
        for j, b in enumerate(ys):
            assert M[i, j] == pytest.approx(iou(a, b), abs=1e-12)


@pytest.mark.parametrize(
    "box,expected",
    [((-5, -5, 5, 5), (0, 0, 5, 5)), ((0, 0, 10, 10), (0, 0, 10, 10)), ((200, 200, 210, 210), None)],
)
def test_clip_box(box, expected):
    out = clip_box(BoundingBox(*box), 100, 100)
    assert (out.as_tuple() if out else None) == (tuple(float(v) for v in expected) if expected else None)


def test_box_from_pixel_set_examples():
    assert box_from_pixel_set({(3, 4)}).as_tuple() == (3, 4, 4, 5)
    assert box_from_pixel_set({(0, 0), (9, 9)}).as_tuple() == (0, 0, 10, 10)
    with pytest.raises(ValueError):
        box_from_pixel_set(set())


def test_box_from_rendered_rectangle():
    img = np.zeros((60, 60), dtype=bool)
    img[7:37, 5:25] = True  # 20 wide, 30 tall at (5, 7)
    pixels = {(int(x), int(y)) for y, x in zip(*np.nonzero(img))}
    assert box_from_pixel_set(pixels).as_tuple() == (5, 7, 25, 37)
    assert box_from_mask(img).as_tuple() == (5, 7, 25, 37)


@given(st.lists(st.tuples(st.integers(0, 100), st.integers(0, 100)), min_size=1, max_size=30), st.randoms())
def test_box_from_pixel_set_order_invariant(pix, rnd):
    shuffled = list(pix)
    rnd.shuffle(shuffled)
    assert box_from_pixel_set(pix) == box_from_pixel_set(shuffled)


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.2, 9))
def test_camera_projection_roundtrip(x, y, z):
    cam = CameraIntrinsics()
    uv = cam.project(np.array([x, y, z]))
    back = cam.back_project(uv[0] - 0.5, uv[1] - 0.5, z)
    assert np.allclose(back, [x, y, z], atol=1e-9)


def test_frame_validation():
    rgb = np.zeros((4, 5, 3), np.uint8)
    with pytest.raises(ValueError):
        RgbdFrame(rgb, np.zeros((4, 4), np.float32), 0.0, 0)
    with pytest.raises(ValueError):
        RgbdFrame(rgb, -np.ones((4, 5), np.float32), 0.0, 0)
    f = RgbdFrame(rgb, np.array([[0.0, 0.05, 1.0, 10.0, 11.0]] * 4, np.float32), 0.0, 0)
    assert f.valid_mask[0].tolist() == [False, False, True, True, False]
    with pytest.raises(ValueError):
        f.depth[0, 0] = 1.0  # frames are immutable


def test_annotation_json_roundtrip_and_registry():
    a = Annotation(3, BoundingBox(1.5, 2, 10, 12), "025_mug", AnnotationSource.HAND_PROXIMAL, 40)
    assert Annotation.from_json(a.to_json()) == a
    reg = ClassRegistry()
    assert reg.register("a") == 0 and reg.register("b") == 1 and reg.register("a") == 0
    with pytest.raises(KeyError):
        reg.check("c")
    with pytest.raises(ValueError):
        Detection(BoundingBox(0, 0, 1, 1), "a", float("inf"))
