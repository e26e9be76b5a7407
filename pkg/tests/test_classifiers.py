from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from socialcues.classifiers import (
    FiveFoldGrid,
    OnlineTrainerState,
    PoolExhaustedError,
    RandomizedSearch,
    Side,
    SingleClassError,
    SvmModel,
    calibrate,
    confidence,
    hand_selection,
    load_svm,
    model_select,
    mutual_gaze,
    online_teacher_update,
    predict,
    save_svm,
    svm_decision,
    svm_train,
)
from socialcues.perception import KeypointSet, gaze_feature, mirror_keypoints
from socialcues.simworld import Gaze, Hand, negatives_pool, render_sequence, simulated_face_embedding
from socialcues.simworld.scripts import make_script


def kernel_sum_oracle(m: SvmModel, x):
    total = m.bias
    for sv, c in zip(m.support_vectors, m.dual_coefs):
        total += c * np.exp(-m.gamma * sum((a - b) ** 2 for a, b in zip(x, sv)))
    return total


def separable(n=100, seed=0):
    rng = np.random.default_rng(seed)
    X = np.r_[rng.normal([-2, -2], 0.5, (n // 2, 2)), rng.normal([2, 2], 0.5, (n // 2, 2))]
    return X, np.r_[-np.ones(n // 2), np.ones(n // 2)]


XOR_X = np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 1.0], [1.0, 0.0]])
XOR_Y = np.array([-1.0, -1.0, 1.0, 1.0])


def test_separable_fixture():
    X, y = separable()
    m = svm_train(X, y, C=1.0, gamma=0.5)
    assert np.array_equal(predict(m, X), y)
    m.check_feasibility()


def test_xor_fixture():
    m = svm_train(XOR_X, XOR_Y, C=10.0, gamma=1.0)
    assert np.array_equal(predict(m, XOR_X), XOR_Y)
    m.check_feasibility()


def test_two_point_problem():
    X = np.array([[0.0, 0.0], [1.0, 0.0]])
    m = svm_train(X, [1.0, -1.0], C=1.0, gamma=1.0)
    assert len(m.dual_coefs) == 2
    assert svm_decision(m, X[0]) > 0 and svm_decision(m, X[1]) < 0
    assert abs(svm_decision(m, [0.5, 0.0])) < 1e-9  # symmetric midpoint


def test_decision_matches_kernel_sum_oracle():
    X = np.array([[0.0, 0.0], [1.0, 0.5], [2.0, 0.0]])
    m = svm_train(X, [1.0, -1.0, 1.0], C=10.0, gamma=0.7)
    assert len(m.dual_coefs) == 3
    for x in np.random.default_rng(0).normal(size=(20, 2)):
        assert svm_decision(m, x) == pytest.approx(kernel_sum_oracle(m, x), abs=1e-12)


@given(st.integers(0, 10_000), st.integers(4, 30), st.floats(0.1, 100), st.floats(0.05, 5))
def test_dual_feasibility_on_random_problems(seed, n, C, gamma):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 3))
    y = np.where(rng.random(n) < 0.5, -1.0, 1.0)
    y[:2] = (-1.0, 1.0)
    m = svm_train(X, y, C=C, gamma=gamma)
    assert np.all(np.abs(m.dual_coefs) <= C + 1e-6)
    assert abs(m.dual_coefs.sum()) <= 1e-6
    x = rng.normal(size=3)
    assert svm_decision(m, x) == pytest.approx(kernel_sum_oracle(m, x), abs=1e-12)


def test_svm_errors():
    with pytest.raises(SingleClassError):
        svm_train(np.zeros((3, 2)), np.ones(3))
    with pytest.raises(ValueError):
        svm_train(np.array([[0.0, np.nan], [1.0, 1.0]]), [1.0, -1.0])
    m = svm_train(XOR_X, XOR_Y, C=10.0, gamma=1.0)
    with pytest.raises(ValueError):
        svm_decision(m, [1.0, 2.0, 3.0])


def test_svm_deterministic_and_serialisable(tmp_path):
    X, y = separable(60, seed=4)
    a, b = svm_train(X, y, 1.0, 0.5), svm_train(X, y, 1.0, 0.5)
    assert np.array_equal(a.dual_coefs, b.dual_coefs) and a.bias == b.bias
    m = calibrate(a, X)
    save_svm(m, tmp_path / "m.bin")
    back = load_svm(tmp_path / "m.bin")
    assert np.array_equal(back.support_vectors, m.support_vectors) and back.margin_scale == m.margin_scale
    assert (tmp_path / "m.bin.json").exists()
    assert svm_decision(back, X[3]) == svm_decision(m, X[3])


def test_confidence_in_unit_interval():
    X, y = separable(60, seed=5)
    m = calibrate(svm_train(X, y, 1.0, 0.5), X)
    for d in (-10.0, -0.1, 0.0, 0.3, 50.0):
        assert 0.0 <= confidence(m, d) <= 1.0
    assert confidence(m, 1e6) == 1.0


def underfit_fixture():
    rng = np.random.default_rng(0)
    X = np.r_[rng.uniform(-1, -0.3, (30, 1)), rng.uniform(0.3, 1, (10, 1))]
    return X, np.r_[-np.ones(30), np.ones(10)]


def test_model_select_examples():
    X, y = underfit_fixture()
    assert model_select(X, y, [(1.0, 0.5)]) == (1.0, 0.5)
    # with a near-flat kernel, C = 0.1 cannot move the boundary off the majority class
    assert np.mean(predict(svm_train(X, y, 0.1, 0.01), X) == y) < 1.0
    assert model_select(X, y, [(0.1, 0.01), (10.0, 0.01)]) == (10.0, 0.01)
    with pytest.raises(ValueError):
        model_select(X, y, [])


def test_randomized_search_deterministic_and_order_free():
    X, y = separable(40, seed=2)
    grid = [(c, g) for c in (0.01, 0.1, 1.0, 10.0, 100.0) for g in (0.001, 0.01, 0.1, 1.0)]
    scheme = RandomizedSearch(k=5, seed=3)
    first = model_select(X, y, grid, scheme)
    assert model_select(X, y, grid, scheme) == first
    rev = list(reversed(grid))
    assert model_select(X, y, rev, scheme) == first
    assert model_select(X, y, rev, FiveFoldGrid()) == model_select(X, y, grid, FiveFoldGrid())


# -- teacher recognition -------------------------------------------------------


def batch(identity, sigma, offset=0):
    return np.stack([simulated_face_embedding(identity, offset + i, sigma) for i in range(300)])


def test_online_trainer_low_noise_terminates_after_one_batch():
    st0 = OnlineTrainerState(seed=0)
    st1 = online_teacher_update(st0, batch("teacher_0", 0.02), negatives_pool())
    assert st1.done and st1.batches_collected == 1 and st1.val_accuracy >= 0.99
    assert st1.positives.shape == (300, 128) and st1.negatives.shape == (300, 128)
    st1.current_model.check_feasibility()
    assert online_teacher_update(st1, batch("teacher_0", 0.02, 300), negatives_pool()) is st1


def test_online_trainer_high_noise_collects_second_batch():
    pool = negatives_pool()
    st = online_teacher_update(OnlineTrainerState(seed=0), batch("teacher_0", 0.3), pool)
    assert not st.done and st.val_accuracy < 0.99
    st = online_teacher_update(st, batch("teacher_0", 0.3, 1000), pool)
    assert st.batches_collected == 2 and len(st.positives) == 600 and len(st.negatives) == 600


def test_online_trainer_noop_partial_and_exhausted():
    st0 = OnlineTrainerState(seed=0)
    assert online_teacher_update(st0, np.zeros((0, 128)), negatives_pool()) is st0
    part = online_teacher_update(st0, batch("teacher_0", 0.3)[:120], negatives_pool())
    assert part.batches_collected == 0 and len(part.pending) == 120
    with pytest.raises(PoolExhaustedError):
        online_teacher_update(st0, batch("teacher_0", 0.3), negatives_pool()[:200])


# -- gaze classifiers on scripted frames ----------------------------------------


def scripted_teacher_keypoints(hand: Hand, n=150, seed=4):
    s = make_script("constrained", "025_mug", seed=seed, n_frames=n, held_hand=hand, identity="teacher_3")
    out = []
    for _, rec in render_sequence(s):
        kp = rec.teacher_keypoints()
        try:
            gaze_feature(kp)
        except ValueError:
            continue
        out.append((rec.teacher_gaze, kp))
    return out


@pytest.fixture(scope="module")
def scripted():
    return {h: scripted_teacher_keypoints(h) for h in Hand}


def test_hand_selection_on_scripted_frames(social_models, scripted):
    for hand, want in ((Hand.LEFT, Side.LEFT), (Hand.RIGHT, Side.RIGHT)):
        target = Gaze.AT_LEFT_HAND if hand is Hand.LEFT else Gaze.AT_RIGHT_HAND
        sels = [hand_selection(gaze_feature(kp), social_models.hand_selection) for g, kp in scripted[hand] if g is target]
        assert len(sels) > 50
        ok = [s.p is want and s.c > 0.5 for s in sels]
        assert np.mean(ok) >= 0.95


def test_hand_selection_mirror_flips_side(social_models, scripted):
    left = [kp for g, kp in scripted[Hand.LEFT] if g is Gaze.AT_LEFT_HAND]
    flipped = [hand_selection(gaze_feature(mirror_keypoints(kp, 320)), social_models.hand_selection) for kp in left]
    assert np.mean([s.p is Side.RIGHT for s in flipped]) >= 0.95


def test_mutual_gaze_on_scripted_frames(social_models, scripted):
    frames = scripted[Hand.LEFT] + scripted[Hand.RIGHT]
    at_robot = [mutual_gaze(gaze_feature(kp), social_models.mutual_gaze) for g, kp in frames if g is Gaze.AT_ROBOT]
    away = [mutual_gaze(gaze_feature(kp), social_models.mutual_gaze) for g, kp in frames if g is Gaze.AWAY]
    assert len(at_robot) > 20
    assert np.mean(at_robot) >= 0.95
    if away:
        assert np.mean(away) <= 0.05


def test_mutual_gaze_translation_invariant(social_models, scripted):
    for _, kp in scripted[Hand.LEFT][:30]:
        moved = KeypointSet(kp.person_ref, {n: (x + 17.0, y - 9.0, k) for n, (x, y, k) in kp.points.items()})
        assert mutual_gaze(gaze_feature(kp), social_models.mutual_gaze) == mutual_gaze(
            gaze_feature(moved), social_models.mutual_gaze)


def test_social_models_feasible(social_models):
    social_models.mutual_gaze.check_feasibility()
    social_models.hand_selection.check_feasibility()
