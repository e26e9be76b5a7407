"""Teacher recognition, mutual gaze and hand selection on top of the SVM."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from ..core import CameraIntrinsics
from ..perception import (
    DegenerateFeatureError,
    GazeFeature,
    InsufficientKeypointsError,
    KeypointSet,
    gaze_feature,
    mirror_keypoints,
)
from .svm import (
    RandomizedSearch,
    FiveFoldGrid,
    SvmModel,
    calibrate,
    confidence,
    default_grid,
    model_select,
    svm_decision,
    svm_train,
)

BATCH_PER_CLASS = 300
VALIDATION_FRACTION = 0.3
STOP_ACCURACY = 0.99
# gaze features are unit-scaled, so kernels narrower than the generic default pay off
GAZE_GAMMA_SCALES = (1.0, 10.0, 30.0)
SELECTION_SUBSAMPLE = 1600


class PoolExhaustedError(RuntimeError):
    pass


class Side(str, enum.Enum):
    LEFT = "left"
    RIGHT = "right"


@dataclass(frozen=True)
class HandSelection:
    p: Side
    c: float

    def __post_init__(self):
        if not 0.0 <= self.c <= 1.0:
            raise ValueError(f"confidence out of [0, 1]: {self.c}")


def mutual_gaze(f: GazeFeature, m: SvmModel) -> bool:
    return svm_decision(m, f.values) >= 0


def hand_selection(f: GazeFeature, m: SvmModel) -> HandSelection:
    """Positive decisions mean the teacher looks at their left hand."""
    d = svm_decision(m, f.values)
    return HandSelection(Side.LEFT if d >= 0 else Side.RIGHT, confidence(m, d))


# -- teacher recognition -----------------------------------------------------


@dataclass(frozen=True, eq=False)
class OnlineTrainerState:
    batches_collected: int = 0
    positives: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    negatives: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    current_model: Optional[SvmModel] = None
    val_accuracy: float = 0.0
    done: bool = False
    pending: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))
    negatives_used: int = 0
    seed: int = 0


def _stack(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return b.copy() if a.size == 0 else np.vstack([a, b])


def train_val_split(n_pos: int, n_neg: int, seed: int, frac: float = VALIDATION_FRACTION):
    """Stratified boolean validation masks for positives and negatives."""
    rng = np.random.default_rng(seed)
    out = []
    for n in (n_pos, n_neg):
        mask = np.zeros(n, dtype=bool)
        mask[rng.permutation(n)[: int(round(frac * n))]] = True
        out.append(mask)
    return out


def online_teacher_update(
    state: OnlineTrainerState,
    new_samples: np.ndarray,
    negatives_pool: np.ndarray,
    grid: Optional[Sequence[tuple[float, float]]] = None,
) -> OnlineTrainerState:
    """Accumulate teacher embeddings; each full batch of 300 triggers a retrain.

    Negatives are drawn from ``negatives_pool`` in order. Training stops for good
    once validation accuracy reaches 0.99.
    """
    new_samples = np.asarray(new_samples, dtype=np.float64)
    if new_samples.size == 0 or state.done:
        return state
    new_samples = new_samples.reshape(-1, new_samples.shape[-1])
    pending = _stack(state.pending, new_samples)
    st = replace(state, pending=pending)
    while len(st.pending) >= BATCH_PER_CLASS and not st.done:
        lo, hi = st.negatives_used, st.negatives_used + BATCH_PER_CLASS
        if hi > len(negatives_pool):
            raise PoolExhaustedError(f"negatives pool holds {len(negatives_pool)}, need {hi}")
        pos = _stack(st.positives, st.pending[:BATCH_PER_CLASS])
        neg = _stack(st.negatives, np.asarray(negatives_pool[lo:hi], dtype=np.float64))
        batches = st.batches_collected + 1
        vp, vn = train_val_split(len(pos), len(neg), st.seed + batches)
        Xtr = np.vstack([pos[~vp], neg[~vn]])
        ytr = np.r_[np.ones((~vp).sum()), -np.ones((~vn).sum())]
        Xva = np.vstack([pos[vp], neg[vn]])
        yva = np.r_[np.ones(vp.sum()), -np.ones(vn.sum())]
        g = grid if grid is not None else default_grid(pos.shape[1], (0.1, 1.0, 10.0))
        C, gamma = model_select(Xtr, ytr, g, RandomizedSearch(k=8, seed=st.seed), seed=st.seed)
        model = svm_train(Xtr, ytr, C, gamma)
        acc = float(np.mean(np.where(svm_decision(model, Xva) >= 0, 1.0, -1.0) == yva))
        st = replace(
            st,
            batches_collected=batches,
            positives=pos,
            negatives=neg,
            pending=st.pending[BATCH_PER_CLASS:],
            negatives_used=hi,
            current_model=model,
            val_accuracy=acc,
            done=acc >= STOP_ACCURACY,
        )
    return st


def teacher_scores(m: Optional[SvmModel], embeddings: Sequence[Optional[np.ndarray]]) -> list[Optional[float]]:
    if m is None:
        return [None] * len(embeddings)
    return [None if e is None else float(svm_decision(m, e)) for e in embeddings]


# -- gaze datasets -----------------------------------------------------------


@dataclass(frozen=True)
class GazeSample:
    feature: np.ndarray
    gaze: str  # a simworld Gaze value
    identity: str


def simulate_gaze_samples(
    identities: Sequence[str],
    n_per_gaze: int,
    seed: int,
    depth_range: tuple[float, float] = (0.6, 2.2),
    jitter_sigma: float = 1.5,
    dropout_prob: float = 0.05,
    camera: Optional[CameraIntrinsics] = None,
    gaze_weights: Optional[dict] = None,
) -> list[GazeSample]:
    """Face keypoints of standing participants under every gaze condition.

    ``gaze_weights`` multiplies ``n_per_gaze`` per gaze value (default 1).
    """
    from ..simworld.people import HEAD_YAW_SIGMA_DEG, FaceGeometry, Gaze, build_skeleton, skeleton_keypoints
    from ..simworld.scene import default_camera

    cam = camera or default_camera()
    out = []
    for k, ident in enumerate(identities):
        geo = FaceGeometry.for_identity(ident)
        rng = np.random.default_rng([seed, k])
        for gaze in Gaze:
            made = 0
            target = int(round(n_per_gaze * (gaze_weights or {}).get(gaze.value, 1)))
            while made < target:
                z = rng.uniform(*depth_range)
                chest = np.array([rng.uniform(-0.25, 0.25) * z, 0.12, z])
                sk = build_skeleton(chest)
                yaw = float(rng.normal(0.0, math.radians(HEAD_YAW_SIGMA_DEG)))
                kp = skeleton_keypoints(sk, geo, gaze, cam, rng, 0, jitter_sigma, dropout_prob, head_yaw=yaw)
                try:
                    f = gaze_feature(kp)
                except (InsufficientKeypointsError, DegenerateFeatureError):
                    continue
                out.append(GazeSample(f.values, gaze.value, ident))
                made += 1
    return out


def mirrored_feature(kp: KeypointSet, width: float) -> np.ndarray:
    return gaze_feature(mirror_keypoints(kp, width)).values


def gaze_arrays(samples: Sequence[GazeSample], task: str) -> tuple[np.ndarray, np.ndarray]:
    """Feature matrix and ±1 labels for ``task`` in {"mutual-gaze", "hand-selection"}."""
    if task == "mutual-gaze":
        X = np.array([s.feature for s in samples])
        y = np.array([1.0 if s.gaze == "at-robot" else -1.0 for s in samples])
        return X, y
    if task == "hand-selection":
        keep = [s for s in samples if s.gaze in ("at-left-hand", "at-right-hand")]
        X = np.array([s.feature for s in keep])
        y = np.array([1.0 if s.gaze == "at-left-hand" else -1.0 for s in keep])
        return X, y
    raise ValueError(f"unknown task {task!r}")


def train_gaze_classifier(
    X: np.ndarray, y: np.ndarray, seed: int = 0, scheme=FiveFoldGrid(), calibrated: bool = True,
    gamma_scales: Sequence[float] = GAZE_GAMMA_SCALES,
    select_on: int = SELECTION_SUBSAMPLE,
) -> SvmModel:
    """Grid-searched RBF SVM on gaze features.

    With ``calibrated`` a stratified 30 % is held out to fix the margin scale
    used for confidences; otherwise every sample is used for training.
    Cross-validation runs on a stratified subsample of at most ``select_on``
    rows; the final model sees all training rows.
    """
    grid = default_grid(X.shape[1], gamma_scales)

    def select(Xs, ys):
        if len(ys) > select_on:
            rng = np.random.default_rng(seed)
            keep = np.zeros(len(ys), dtype=bool)
            for cls in (-1.0, 1.0):
                idx = np.flatnonzero(ys == cls)
                k = int(round(select_on * len(idx) / len(ys)))
                keep[rng.choice(idx, size=k, replace=False)] = True
            Xs, ys = Xs[keep], ys[keep]
        return model_select(Xs, ys, grid, scheme, seed=seed)

    if not calibrated:
        C, gamma = select(X, y)
        return svm_train(X, y, C, gamma)
    vp, vn = train_val_split(int((y > 0).sum()), int((y < 0).sum()), seed)
    val = np.zeros(len(y), dtype=bool)
    val[np.flatnonzero(y > 0)[vp]] = True
    val[np.flatnonzero(y < 0)[vn]] = True
    C, gamma = select(X[~val], y[~val])
    model = svm_train(X[~val], y[~val], C, gamma)
    return calibrate(model, X[val])


def mirror_augment(X: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Append horizontally flipped copies with swapped hand labels.

    Matches ``mirror_keypoints``: names swap sides, x coordinates negate.
    """
    from ..perception import FACE_KEYPOINTS

    F = X.reshape(len(X), len(FACE_KEYPOINTS), 3)
    idx = []
    for name in FACE_KEYPOINTS:
        if name.startswith(("l", "r")):
            other = ("r" if name[0] == "l" else "l") + name[1:]
            idx.append(FACE_KEYPOINTS.index(other))
        else:
            idx.append(FACE_KEYPOINTS.index(name))
    M = F[:, idx, :].copy()
    M[:, :, 0] *= -1.0
    return np.vstack([X, M.reshape(len(X), -1)]), np.r_[y, -y]


PARTICIPANTS = tuple(f"participant_{i:02d}" for i in range(24))
PARTICIPANT_DEPTH_RANGE = (0.6, 1.0)


def participant_dataset(n_per_gaze: int = 80, seed: int = 1) -> list[GazeSample]:
    return simulate_gaze_samples(PARTICIPANTS, n_per_gaze, seed, depth_range=PARTICIPANT_DEPTH_RANGE)


def fit_gaze_task(samples: Sequence[GazeSample], task: str, seed: int = 0) -> SvmModel:
    X, y = gaze_arrays(samples, task)
    if task == "hand-selection":
        X, y = mirror_augment(X, y)
        return train_gaze_classifier(X, y, seed=seed)
    return train_gaze_classifier(X, y, seed=seed, calibrated=False)


def person_split_accuracy(
    samples: Sequence[GazeSample], task: str, n_splits: int = 5, n_test: int = 5, seed: int = 0
) -> list[float]:
    """Held-out accuracy over repeated person-disjoint splits."""
    people = sorted({s.identity for s in samples})
    rng = np.random.default_rng(seed)
    out = []
    for k in range(n_splits):
        test = set(np.array(people)[rng.permutation(len(people))[:n_test]])
        train = [s for s in samples if s.identity not in test]
        held = [s for s in samples if s.identity in test]
        m = fit_gaze_task(train, task, seed=seed + k)
        X, y = gaze_arrays(held, task)
        out.append(float(np.mean(np.where(svm_decision(m, X) >= 0, 1.0, -1.0) == y)))
    return out


@dataclass(frozen=True, eq=False)
class SocialModels:
    mutual_gaze: SvmModel
    hand_selection: SvmModel


_SOCIAL_CACHE: dict = {}


def default_social_models(seed: int = 0) -> SocialModels:
    """Gaze classifiers trained on the simulated participant corpus (cached per process)."""
    if seed not in _SOCIAL_CACHE:
        samples = participant_dataset(seed=seed + 1)
        _SOCIAL_CACHE[seed] = SocialModels(
            fit_gaze_task(samples, "mutual-gaze", seed),
            fit_gaze_task(samples, "hand-selection", seed),
        )
    return _SOCIAL_CACHE[seed]
