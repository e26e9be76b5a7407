"""Keypoint features for the social classifiers and teacher tracking."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .core import BoundingBox, clip_box

EYE_POINTS = 8
FACE_KEYPOINTS: tuple[str, ...] = (
    tuple(f"leye{i}" for i in range(EYE_POINTS))
    + tuple(f"reye{i}" for i in range(EYE_POINTS))
    + ("lear", "rear", "nose")
)
BODY_KEYPOINTS: tuple[str, ...] = (
    "head", "lshoulder", "rshoulder", "lelbow", "relbow", "lwrist", "rwrist", "lhip", "rhip",
)
ALL_KEYPOINTS = FACE_KEYPOINTS + BODY_KEYPOINTS
GAZE_FEATURE_DIM = 3 * len(FACE_KEYPOINTS)
MIN_FACE_KEYPOINTS = 12


class InsufficientKeypointsError(ValueError):
    pass


class DegenerateFeatureError(ValueError):
    pass


@dataclass(frozen=True)
class KeypointSet:
    """Per-person 2D keypoints; a missing keypoint is an absent entry."""

    person_ref: int
    points: Mapping[str, tuple[float, float, float]]

    def __post_init__(self):
        for name, (x, y, k) in self.points.items():
            if not 0.0 <= k <= 1.0:
                raise ValueError(f"confidence of {name} out of [0, 1]: {k}")
            if not (np.isfinite(x) and np.isfinite(y)):
                raise ValueError(f"non-finite keypoint {name}")

    def get(self, name: str) -> Optional[tuple[float, float, float]]:
        return self.points.get(name)

    def xy(self, name: str) -> Optional[np.ndarray]:
        p = self.points.get(name)
        return None if p is None else np.array(p[:2], dtype=np.float64)

    def face_points(self) -> dict[str, tuple[float, float, float]]:
        return {n: self.points[n] for n in FACE_KEYPOINTS if n in self.points}

    def to_json(self) -> dict:
        return {"person_ref": self.person_ref, "points": {n: list(v) for n, v in self.points.items()}}

    @classmethod
    def from_json(cls, d: dict) -> "KeypointSet":
        return cls(int(d["person_ref"]), {n: tuple(float(c) for c in v) for n, v in d["points"].items()})


@dataclass(frozen=True, eq=False)
class GazeFeature:
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (GAZE_FEATURE_DIM,):
            raise ValueError(f"gaze feature must have {GAZE_FEATURE_DIM} entries")


def head_centroid(kp: KeypointSet) -> np.ndarray:
    """The pose estimator's head keypoint, else the mean of the visible face points."""
    head = kp.xy("head")
    if head is not None:
        return head
    face = kp.face_points()
    if not face:
        raise InsufficientKeypointsError("no face keypoints to derive a head centroid")
    return np.mean([v[:2] for v in face.values()], axis=0)


def gaze_feature(kp: KeypointSet) -> GazeFeature:
    face = kp.face_points()
    if len(face) < MIN_FACE_KEYPOINTS:
        raise InsufficientKeypointsError(f"{len(face)} of {len(FACE_KEYPOINTS)} face keypoints present")
    centre = head_centroid(kp)
    out = np.zeros((len(FACE_KEYPOINTS), 3))
    present = np.zeros(len(FACE_KEYPOINTS), dtype=bool)
    for i, name in enumerate(FACE_KEYPOINTS):
        p = face.get(name)
        if p is not None:
            out[i] = (p[0] - centre[0], p[1] - centre[1], p[2])
            present[i] = True
    scale = np.max(np.hypot(out[present, 0], out[present, 1]))
    if scale <= 1e-12:
        raise DegenerateFeatureError("all face keypoints coincide with the head centroid")
    out[:, :2] /= scale
    return GazeFeature(out.reshape(-1))


def face_crop_box(kp: KeypointSet, margin: float = 0.25, frame_size: Optional[tuple[int, int]] = None) -> BoundingBox:
    face = kp.face_points()
    if len(face) < 3:
        raise InsufficientKeypointsError("a face crop needs at least 3 face keypoints")
    xy = np.array([v[:2] for v in face.values()])
    x0, y0 = xy.min(axis=0)
    x1, y1 = xy.max(axis=0)
    # collinear points still get a 1 px box
    if x1 - x0 < 1.0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 - y0 < 1.0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    dx, dy = margin * (x1 - x0), margin * (y1 - y0)
    box = BoundingBox(x0 - dx, y0 - dy, x1 + dx, y1 + dy)
    if frame_size is not None:
        clipped = clip_box(box, *frame_size)
        if clipped is None:
            raise InsufficientKeypointsError("face lies outside the frame")
        box = clipped
    return box


def mirror_keypoints(kp: KeypointSet, width: float) -> KeypointSet:
    """Horizontal flip of the image: ``x -> width - x`` with left/right names swapped."""

    def swap(name: str) -> str:
        if name.startswith("l"):
            return "r" + name[1:]
        if name.startswith("r"):
            return "l" + name[1:]
        return name

    return KeypointSet(kp.person_ref, {swap(n): (width - x, y, k) for n, (x, y, k) in kp.points.items()})


def body_anchor(kp: KeypointSet) -> Optional[np.ndarray]:
    """Hip midpoint, falling back to the head when both hips are out of view."""
    hips = [kp.xy(n) for n in ("lhip", "rhip") if n in kp.points]
    if hips:
        return np.mean(hips, axis=0)
    return kp.xy("head")


@dataclass(frozen=True)
class TrackerConfig:
    accept_threshold: float = 0.0
    max_jump_px: float = 50.0
    max_frames_without_face: int = 35

    def scaled(self, width: int, reference_width: int = 320) -> "TrackerConfig":
        return replace(self, max_jump_px=self.max_jump_px * width / reference_width)


@dataclass(frozen=True)
class TeacherTrack:
    teacher_ref: Optional[int] = None
    last_hip_position: Optional[tuple[float, float]] = None
    frames_since_face_seen: int = 0
    lost: bool = True

    @property
    def active(self) -> bool:
        return not self.lost and self.teacher_ref is not None


def associate_teacher(
    prev: TeacherTrack,
    people: Sequence[KeypointSet],
    teacher_scores: Sequence[Optional[float]],
    cfg: TrackerConfig = TrackerConfig(),
) -> TeacherTrack:
    """Pick this frame's teacher from face scores, else continue the hip track."""
    if len(people) != len(teacher_scores):
        raise ValueError("one score per person is required")
    scored = [(s, i) for i, s in enumerate(teacher_scores) if s is not None and s > cfg.accept_threshold]
    if scored:
        # highest score wins; lowest index on ties
        best = max(scored, key=lambda t: (t[0], -t[1]))[1]
        anchor = body_anchor(people[best])
        return TeacherTrack(
            teacher_ref=people[best].person_ref,
            last_hip_position=None if anchor is None else (float(anchor[0]), float(anchor[1])),
            frames_since_face_seen=0,
            lost=False,
        )
    if prev.lost or prev.last_hip_position is None:
        return replace(prev, teacher_ref=None, lost=True)
    if prev.frames_since_face_seen + 1 > cfg.max_frames_without_face:
        return replace(prev, teacher_ref=None, lost=True, frames_since_face_seen=prev.frames_since_face_seen + 1)
    last = np.asarray(prev.last_hip_position)
    best_i, best_d = None, np.inf
    for i, kp in enumerate(people):
        anchor = body_anchor(kp)
        if anchor is None:
            continue
        d = float(np.hypot(*(anchor - last)))
        if d < best_d:
            best_i, best_d = i, d
    if best_i is None or best_d > cfg.max_jump_px:
        return replace(prev, teacher_ref=None, lost=True, frames_since_face_seen=prev.frames_since_face_seen + 1)
    anchor = body_anchor(people[best_i])
    return TeacherTrack(
        teacher_ref=people[best_i].person_ref,
        last_hip_position=(float(anchor[0]), float(anchor[1])),
        frames_since_face_seen=prev.frames_since_face_seen + 1,
        lost=False,
    )


def find_person(people: Sequence[KeypointSet], ref: Optional[int]) -> Optional[KeypointSet]:
    if ref is None:
        return None
    for kp in people:
        if kp.person_ref == ref:
            return kp
    return None
