from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest

from socialcues.core import box_from_pixel_set
from socialcues.simworld import (
    CATALOG,
    SIZE_SPLITS,
    DistractorPerson,
    Hand,
    NoiseParams,
    ScenarioKind,
    ScriptError,
    SizeClass,
    UnknownIdentityError,
    Waypoint,
    default_bank,
    default_camera,
    negatives_pool,
    render_clean,
    render_frame,
    render_sequence,
    simulated_face_embedding,
    size_class_for,
)
from socialcues.simworld.scene import HELD_OBJECT_ID, TEACHER_ID
from socialcues.simworld.scripts import dump_script, load_script, make_script, script_from_dict


def test_catalog_has_nine_objects_in_three_splits():
    assert len(CATALOG) == 9
    assert sorted(l for ls in SIZE_SPLITS.values() for l in ls) == sorted(CATALOG)
    for cls, labels in SIZE_SPLITS.items():
        assert len(labels) == 3
        assert all(CATALOG[l].size_class is cls for l in labels)


@pytest.mark.parametrize("extent,cls", [((0.099, 0.05), SizeClass.SMALL), ((0.10, 0.05), SizeClass.MEDIUM),
                                        ((0.05, 0.199), SizeClass.MEDIUM), ((0.2, 0.1), SizeClass.BIG)])
def test_size_class_thresholds(extent, cls):
    assert size_class_for(extent) is cls


def test_big_objects_are_tilted_in_depth():
    for label in SIZE_SPLITS[SizeClass.BIG]:
        assert 0.15 <= CATALOG[label].depth_spread <= 0.25


def test_noise_params_validation():
    with pytest.raises(ScriptError):
        NoiseParams(depth_sigma=-1)
    with pytest.raises(ScriptError):
        NoiseParams(keypoint_dropout_prob=1.5)


def _median_area(kind, label="004_sugar_box", n=15):
    s = make_script(kind, label, seed=7, n_frames=n)
    areas = [rec.true_object_box.area for _, rec in render_sequence(s) if rec.true_object_box]
    return float(np.median(areas))


def test_constrained_object_larger_than_from_afar():
    assert _median_area(ScenarioKind.CONSTRAINED) > 2.0 * _median_area(ScenarioKind.FROM_AFAR)


def test_frame_count_resolution_and_timestamps():
    s = make_script("constrained", "025_mug", seed=7, n_frames=12)
    frames = list(render_sequence(s))
    assert len(frames) == 12
    f0 = frames[0][0]
    assert (f0.width, f0.height) == (320, 240) and f0.rgb.shape == (240, 320, 3)
    ts = [f.timestamp for f, _ in frames]
    assert all(b > a for a, b in zip(ts, ts[1:]))
    assert [f.index for f, _ in frames] == list(range(12))
    valid = f0.depth[f0.depth > 0]
    assert valid.min() > 0.1 and valid.max() <= 10.0


def test_render_is_bit_reproducible():
    s = make_script("with-distractors", "037_scissors", seed=3, n_frames=6)
    a = list(render_sequence(s))
    b = list(render_sequence(s))
    for (fa, ra), (fb, rb) in zip(a, b):
        assert fa.rgb.tobytes() == fb.rgb.tobytes() and fa.depth.tobytes() == fb.depth.tobytes()
        assert ra == rb


def test_noise_free_static_scene_is_constant():
    s = make_script("constrained", "025_mug", seed=2, n_frames=5, noise=NoiseParams.none(), static=True)
    frames = [f for f, _ in render_sequence(s)]
    for f in frames[1:]:
        assert np.array_equal(f.rgb, frames[0].rgb) and np.array_equal(f.depth, frames[0].depth)
        assert f.timestamp != frames[0].timestamp


def test_distractor_can_hold_the_minimum_depth():
    s = make_script("with-distractors", "025_mug", seed=5, n_frames=40)
    # put one bystander at exactly 1.0 m, the object stays around 2 m
    d = DistractorPerson("distractor_1", (Waypoint(0.0, (-0.5 * s.teacher.held_hand.side, 0.12, 1.0)),))
    s = replace(s, distractors=(d,))
    s.validate()
    cam = default_camera()
    hits = 0
    for i in range(0, 40, 5):
        canvas = render_clean(s, s.time_of(i), cam)
        assert 1.7 < s.object_centre_at(s.time_of(i))[2] < 2.1
        r, c = np.unravel_index(np.argmin(canvas.depth), canvas.depth.shape)
        hits += canvas.label[r, c] not in (HELD_OBJECT_ID, TEACHER_ID)
    assert hits > 0


def test_scenario_invariants_enforced():
    c = make_script("constrained", "025_mug", seed=1, n_frames=20)
    w = make_script("with-distractors", "025_mug", seed=1, n_frames=20)
    with pytest.raises(ScriptError):
        replace(c, distractors=w.distractors).validate()
    with pytest.raises(ScriptError):
        replace(w, distractors=()).validate()
    far = make_script("from-afar", "025_mug", seed=1, n_frames=20)
    assert all(1.6 <= wp.chest[2] <= 2.4 for wp in far.teacher.waypoints) and not far.distractors
    assert all(0.5 <= wp.chest[2] <= 0.8 for wp in c.teacher.waypoints)


@pytest.mark.parametrize("label", sorted(CATALOG))
def test_noise_free_constrained_object_is_nearest(label):
    s = make_script("constrained", label, seed=11, n_frames=60, noise=NoiseParams.none())
    cam = default_camera()
    for i in range(0, 60, 6):
        frame, rec = render_frame(s, i, cam)
        canvas = render_clean(s, s.time_of(i), cam)
        valid = frame.depth > 0
        d = np.where(valid, frame.depth, np.inf)
        r, c = np.unravel_index(np.argmin(d), d.shape)
        assert canvas.label[r, c] == HELD_OBJECT_ID
        # projection sanity: the truth box bounds the rendered object pixels
        ys, xs = np.nonzero(canvas.label == HELD_OBJECT_ID)
        assert rec.true_object_box == box_from_pixel_set(zip(xs.tolist(), ys.tolist()))


def test_noise_free_object_depth_matches_plane():
    from socialcues.simworld.scripts import object_pose

    s = make_script("constrained", "003_cracker_box", seed=4, n_frames=3, noise=NoiseParams.none())
    cam = default_camera()
    frame, _ = render_frame(s, 1, cam)
    canvas = render_clean(s, s.time_of(1), cam)
    centre, u = object_pose(s.object, s.teacher.wrist_at(s.time_of(1)), s.teacher.held_hand)
    n = np.cross(u, [0.0, 1.0, 0.0])
    ys, xs = np.nonzero(canvas.label == HELD_OBJECT_ID)
    rays = np.stack([(xs + 0.5 - cam.cx) / cam.focal, (ys + 0.5 - cam.cy) / cam.focal, np.ones(len(xs))], 1)
    z = (n @ centre) / (rays @ n)
    assert np.allclose(frame.depth[ys, xs], z, atol=1e-6)
    assert np.ptp(z) > 0.1  # the tilt is visible in depth


def test_teacher_flagged_once():
    s = make_script("with-distractors", "011_banana", seed=9, n_frames=10)
    for _, rec in render_sequence(s):
        refs = [kp.person_ref for kp in rec.keypoints]
        assert len(set(refs)) == len(refs)
        assert refs.count(rec.teacher_ref) == 1


def test_script_yaml_roundtrip(tmp_path):
    s = make_script("with-distractors", "006_mustard_bottle", seed=21, n_frames=30, held_hand=Hand.RIGHT)
    dump_script(s, tmp_path / "s.yaml")
    t = load_script(tmp_path / "s.yaml")
    assert t.to_dict() == s.to_dict()
    f1, _ = render_frame(s, 7)
    f2, _ = render_frame(t, 7)
    assert f1.depth.tobytes() == f2.depth.tobytes()
    with pytest.raises(ScriptError):
        script_from_dict({"kind": "constrained", "object": "025_mug", "bogus": 1})


def test_face_embeddings():
    a = [simulated_face_embedding("teacher_0", k) for k in range(100)]
    b = [simulated_face_embedding("teacher_1", k) for k in range(100)]
    same = [float(a[i] @ a[i + 1]) for i in range(99)]
    diff = [float(x @ y) for x, y in zip(a, b)]
    assert min(same) > 0.9 and max(diff) < 0.5
    assert np.allclose([np.linalg.norm(v) for v in a], 1.0)
    assert np.array_equal(simulated_face_embedding("teacher_0", 5, sigma=0.0), default_bank().base("teacher_0"))
    with pytest.raises(UnknownIdentityError):
        simulated_face_embedding("nobody", 0)


def test_identity_bases_well_separated():
    bank = default_bank()
    B = np.stack([bank.base(n) for n in bank.names[:80]])
    G = B @ B.T
    np.fill_diagonal(G, 0)
    assert G.max() < 0.3


def test_negatives_pool_fixture():
    pool = negatives_pool()
    assert pool.shape == (6000, 128)
    assert np.array_equal(pool, negatives_pool())
