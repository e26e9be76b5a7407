from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from socialcues.perception import (
    FACE_KEYPOINTS,
    GAZE_FEATURE_DIM,
    DegenerateFeatureError,
    InsufficientKeypointsError,
    KeypointSet,
    TeacherTrack,
    TrackerConfig,
    associate_teacher,
    face_crop_box,
    gaze_feature,
    mirror_keypoints,
)


def face_kp(rng, n_present=19, centre=(100.0, 80.0), spread=20.0, head=True):
    names = list(FACE_KEYPOINTS)
    keep = sorted(rng.choice(len(names), size=n_present, replace=False))
    pts = {names[i]: (centre[0] + rng.uniform(-spread, spread), centre[1] + rng.uniform(-spread, spread),
                      float(rng.uniform(0.3, 1.0))) for i in keep}
    if head:
        pts["head"] = (centre[0], centre[1], 0.9)
    return KeypointSet(0, pts)


def transformed(kp, s, tx, ty):
    c = kp.points["head"]
    return KeypointSet(kp.person_ref, {n: (c[0] + s * (x - c[0]) + tx, c[1] + s * (y - c[1]) + ty, k)
                                       for n, (x, y, k) in kp.points.items()})


def test_farthest_point_has_unit_norm():
    pts = {n: (100.0 + i, 80.0, 1.0) for i, n in enumerate(FACE_KEYPOINTS)}
    pts["nose"] = (140.0, 80.0, 0.5)  # 40 px away, the farthest point
    pts["head"] = (100.0, 80.0, 1.0)
    v = gaze_feature(KeypointSet(0, pts)).values.reshape(-1, 3)
    norms = np.hypot(v[:, 0], v[:, 1])
    assert norms.max() == 1.0 and norms[FACE_KEYPOINTS.index("nose")] == 1.0
    assert v[FACE_KEYPOINTS.index("nose"), 2] == 0.5  # confidence passes through


def test_examples_translation_and_scale_exact():
    rng = np.random.default_rng(0)
    kp = face_kp(rng)
    kp = KeypointSet(0, {n: (float(round(x)), float(round(y)), k) for n, (x, y, k) in kp.points.items()})
    base = gaze_feature(kp).values
    assert np.array_equal(gaze_feature(transformed(kp, 1.0, 30, 30)).values, base)
    assert np.array_equal(gaze_feature(transformed(kp, 2.0, 0, 0)).values, base)


@given(st.integers(0, 10_000), st.floats(0.2, 5.0), st.floats(-200, 200), st.floats(-200, 200),
       st.integers(12, 19))
def test_gaze_feature_similarity_invariant(seed, s, tx, ty, n):
    kp = face_kp(np.random.default_rng(seed), n_present=n)
    a = gaze_feature(kp).values
    b = gaze_feature(transformed(kp, s, tx, ty)).values
    assert a.shape == (GAZE_FEATURE_DIM,)
    assert np.allclose(a, b, atol=1e-9)
    assert np.array_equal(a.reshape(-1, 3)[:, 2], b.reshape(-1, 3)[:, 2])
    xy = a.reshape(-1, 3)[:, :2]
    assert np.hypot(xy[:, 0], xy[:, 1]).max() == pytest.approx(1.0, abs=1e-12)


def test_missing_points_imputed_as_zero():
    kp = face_kp(np.random.default_rng(3), n_present=12)
    v = gaze_feature(kp).values.reshape(-1, 3)
    for i, n in enumerate(FACE_KEYPOINTS):
        if n not in kp.points:
            assert np.array_equal(v[i], [0, 0, 0])


def test_gaze_feature_errors():
    with pytest.raises(InsufficientKeypointsError):
        gaze_feature(face_kp(np.random.default_rng(1), n_present=11))
    pts = {n: (50.0, 50.0, 1.0) for n in FACE_KEYPOINTS}
    pts["head"] = (50.0, 50.0, 1.0)
    with pytest.raises(DegenerateFeatureError):
        gaze_feature(KeypointSet(0, pts))


def test_keypoint_validation():
    with pytest.raises(ValueError):
        KeypointSet(0, {"nose": (1.0, 1.0, 1.5)})
    kp = KeypointSet(0, {"nose": (1.0, 2.0, 0.5)})
    assert KeypointSet.from_json(kp.to_json()) == kp


def test_face_crop_box_examples():
    kp = KeypointSet(0, {"leye0": (10.0, 10.0, 1.0), "reye0": (30.0, 30.0, 1.0), "nose": (20.0, 20.0, 1.0)})
    assert face_crop_box(kp).as_tuple() == (5, 5, 35, 35)
    assert face_crop_box(kp, margin=0.0).as_tuple() == (10, 10, 30, 30)
    edge = KeypointSet(0, {"leye0": (1.0, 1.0, 1.0), "reye0": (30.0, 30.0, 1.0), "nose": (20.0, 20.0, 1.0)})
    b = face_crop_box(edge, frame_size=(320, 240))
    assert b.x_min == 0 and b.y_min == 0
    with pytest.raises(InsufficientKeypointsError):
        face_crop_box(KeypointSet(0, {"nose": (1.0, 1.0, 1.0)}))


@given(st.lists(st.tuples(st.floats(0, 300), st.floats(0, 200)), min_size=3, max_size=19), st.floats(0, 1))
def test_face_crop_contains_all_points(xy, margin):
    kp = KeypointSet(0, {FACE_KEYPOINTS[i]: (x, y, 1.0) for i, (x, y) in enumerate(xy)})
    b = face_crop_box(kp, margin)
    for x, y, _ in kp.points.values():
        assert b.x_min <= x <= b.x_max and b.y_min <= y <= b.y_max


def test_mirror_swaps_sides():
    kp = KeypointSet(0, {"lwrist": (10.0, 5.0, 1.0), "nose": (50.0, 5.0, 0.7)})
    m = mirror_keypoints(kp, 320)
    assert m.points == {"rwrist": (310.0, 5.0, 1.0), "nose": (270.0, 5.0, 0.7)}
    assert mirror_keypoints(m, 320) == kp


def person(ref, hip_x, hip_y=150.0):
    return KeypointSet(ref, {"lhip": (hip_x - 5, hip_y, 1.0), "rhip": (hip_x + 5, hip_y, 1.0)})


def test_associate_examples():
    t = associate_teacher(TeacherTrack(), [person(0, 100)], [1.2])
    assert t.teacher_ref == 0 and t.frames_since_face_seen == 0 and t.last_hip_position == (100.0, 150.0)
    t2 = associate_teacher(t, [person(0, 300), person(1, 110)], [None, None])
    assert t2.teacher_ref == 1 and t2.frames_since_face_seen == 1
    t3 = associate_teacher(t, [person(0, 180)], [None])
    assert t3.lost and t3.teacher_ref is None
    # negative scores are not teacher confirmations
    assert associate_teacher(TeacherTrack(), [person(0, 100)], [-0.3]).lost


def test_track_times_out_without_face():
    cfg = TrackerConfig(max_frames_without_face=35)
    t = associate_teacher(TeacherTrack(), [person(0, 100)], [1.0], cfg)
    for _ in range(35):
        t = associate_teacher(t, [person(0, 100)], [None], cfg)
        assert t.active
    assert associate_teacher(t, [person(0, 100)], [None], cfg).lost


@given(st.lists(st.tuples(st.floats(0, 320), st.one_of(st.none(), st.floats(-2, 2))), min_size=0, max_size=6),
       st.floats(0, 320))
def test_at_most_one_teacher(people, last_x):
    kps = [person(i, x) for i, (x, _) in enumerate(people)]
    prev = TeacherTrack(0, (last_x, 150.0), 0, False)
    t = associate_teacher(prev, kps, [s for _, s in people])
    assert t.teacher_ref is None or sum(kp.person_ref == t.teacher_ref for kp in kps) == 1
    if any(s is not None and s > 0 for _, s in people):
        assert t.frames_since_face_seen == 0 and not t.lost
