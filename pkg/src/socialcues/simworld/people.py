"""Simulated people: identities, face embeddings and stick-figure keypoints."""
from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np

from ..core import CameraIntrinsics
from ..perception import EYE_POINTS, FACE_KEYPOINTS, KeypointSet

EMBEDDING_DIM = 128
MAX_BASE_COSINE = 0.3
DEFAULT_EMBEDDING_SIGMA = 0.02
GAZE_SHIFT_FRACTION = 0.2
# face landmarks come from a dedicated detector and are localised more tightly than body joints
FACE_JITTER_SCALE = 0.5
HEAD_YAW_SIGMA_DEG = 2.0


class Gaze(str, enum.Enum):
    AT_ROBOT = "at-robot"
    AT_LEFT_HAND = "at-left-hand"
    AT_RIGHT_HAND = "at-right-hand"
    AWAY = "away"


class Hand(str, enum.Enum):
    LEFT = "left"
    RIGHT = "right"

    @property
    def side(self) -> float:
        # the teacher faces the camera, so their left is image right (+X)
        return 1.0 if self is Hand.LEFT else -1.0

    @property
    def prefix(self) -> str:
        return "l" if self is Hand.LEFT else "r"


def _name_seed(name: str, salt: str = "") -> int:
    digest = hashlib.sha256(f"{salt}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def default_identity_names() -> list[str]:
    return (
        [f"teacher_{i}" for i in range(8)]
        + [f"participant_{i:02d}" for i in range(24)]
        + [f"distractor_{i}" for i in range(8)]
        + [f"lfw_{i:04d}" for i in range(600)]
    )


class UnknownIdentityError(KeyError):
    pass


class IdentityBank:
    """Registered identities with well separated base face embeddings.

    Base vectors are drawn in registration order and redrawn until their cosine
    similarity with every earlier identity is below ``MAX_BASE_COSINE``.
    """

    def __init__(self, names: Optional[list[str]] = None, seed: int = 2023):
        self.seed = seed
        self._names: list[str] = []
        self._index: dict[str, int] = {}
        self._bases = np.zeros((0, EMBEDDING_DIM))
        for n in names if names is not None else default_identity_names():
            self.register(n)

    def register(self, name: str) -> None:
        if name in self._index:
            return
        rng = np.random.default_rng([self.seed, _name_seed(name, "face")])
        while True:
            v = rng.standard_normal(EMBEDDING_DIM)
            v /= np.linalg.norm(v)
            if len(self._names) == 0 or np.max(self._bases @ v) < MAX_BASE_COSINE:
                break
        self._index[name] = len(self._names)
        self._names.append(name)
        self._bases = np.vstack([self._bases, v])

    def __contains__(self, name: str) -> bool:
        return name in self._index

    @property
    def names(self) -> list[str]:
        return list(self._names)

    def base(self, name: str) -> np.ndarray:
        try:
            return self._bases[self._index[name]].copy()
        except KeyError:
            raise UnknownIdentityError(name) from None

    def embedding(self, name: str, noise_seed: int, sigma: float = DEFAULT_EMBEDDING_SIGMA) -> np.ndarray:
        base = self.base(name)
        if sigma == 0:
            return base
        rng = np.random.default_rng([_name_seed(name, "noise"), noise_seed & 0xFFFFFFFFFFFFFFFF])
        v = base + sigma * rng.standard_normal(EMBEDDING_DIM)
        return v / np.linalg.norm(v)


@lru_cache(maxsize=4)
def default_bank(seed: int = 2023) -> IdentityBank:
    return IdentityBank(seed=seed)


def simulated_face_embedding(
    person_identity: str,
    noise_seed: int,
    sigma: float = DEFAULT_EMBEDDING_SIGMA,
    bank: Optional[IdentityBank] = None,
) -> np.ndarray:
    """128-d unit embedding standing in for a face-recognition network output."""
    return (bank or default_bank()).embedding(person_identity, noise_seed, sigma)


def negatives_pool(n: int = 6000, seed: int = 7, sigma: float = DEFAULT_EMBEDDING_SIGMA) -> np.ndarray:
    """Face embeddings of unrelated people (10 images per pool identity)."""
    bank = default_bank()
    lfw = [name for name in bank.names if name.startswith("lfw_")]
    rng = np.random.default_rng(seed)
    out = np.empty((n, EMBEDDING_DIM))
    for i in range(n):
        out[i] = bank.embedding(lfw[i % len(lfw)], int(rng.integers(2**62)), sigma)
    return out


@dataclass(frozen=True)
class FaceGeometry:
    """Per-identity face layout in metres, head frame (X right, Y down, Z away)."""

    iod: float
    eye_rx: float
    eye_ry: float
    eye_y: float
    ear_x: float
    ear_y: float
    nose_y: float
    shirt: tuple[int, int, int]

    @classmethod
    def for_identity(cls, name: str) -> "FaceGeometry":
        rng = np.random.default_rng(_name_seed(name, "geometry"))
        shirts = [(90, 110, 140), (140, 100, 80), (80, 130, 100), (160, 160, 170), (120, 70, 70), (70, 80, 90)]
        return cls(
            iod=float(rng.uniform(0.058, 0.070)),
            eye_rx=float(rng.uniform(0.012, 0.016)),
            eye_ry=float(rng.uniform(0.005, 0.008)),
            eye_y=float(rng.uniform(-0.012, -0.008)),
            ear_x=float(rng.uniform(0.070, 0.080)),
            ear_y=float(rng.uniform(0.002, 0.008)),
            nose_y=float(rng.uniform(0.025, 0.035)),
            shirt=shirts[int(rng.integers(len(shirts)))],
        )


def gaze_eye_offset(gaze: Gaze, iod: float) -> np.ndarray:
    d = GAZE_SHIFT_FRACTION * iod
    return {
        Gaze.AT_ROBOT: np.array([0.0, 0.0]),
        Gaze.AT_LEFT_HAND: np.array([d, 0.0]),
        Gaze.AT_RIGHT_HAND: np.array([-d, 0.0]),
        Gaze.AWAY: np.array([0.0, -d]),
    }[gaze]


def face_points_3d(geo: FaceGeometry, head: np.ndarray, gaze: Gaze, yaw: float = 0.0) -> dict[str, np.ndarray]:
    """3D positions of the 19 face landmarks for a head centred at ``head``."""
    off = gaze_eye_offset(gaze, geo.iod)
    pts: dict[str, np.ndarray] = {}
    angles = np.arange(EYE_POINTS) * (2 * np.pi / EYE_POINTS)
    for prefix, sx in (("l", 1.0), ("r", -1.0)):
        cx = sx * geo.iod / 2 + off[0]
        cy = geo.eye_y + off[1]
        for i, a in enumerate(angles):
            pts[f"{prefix}eye{i}"] = np.array([cx + geo.eye_rx * np.cos(a), cy + geo.eye_ry * np.sin(a), -0.075])
        pts[f"{prefix}ear"] = np.array([sx * geo.ear_x, geo.ear_y, 0.0])
    pts["nose"] = np.array([0.0, geo.nose_y, -0.095])
    # the face is turned toward the camera at the origin, then perturbed by ``yaw``
    head = np.asarray(head, dtype=np.float64)
    theta = math.atan2(head[0], head[2]) + yaw
    phi = math.atan2(-head[1], head[2])
    c, s = math.cos(theta), math.sin(theta)
    ry = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    c, s = math.cos(phi), math.sin(phi)
    rx = np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])
    rot = ry @ rx
    return {n: head + rot @ p for n, p in pts.items()}


@dataclass(frozen=True)
class Skeleton:
    """3D joints of one stick-figure person."""

    chest: np.ndarray
    head: np.ndarray
    shoulders: dict[str, np.ndarray]
    elbows: dict[str, np.ndarray]
    wrists: dict[str, np.ndarray]
    hips: dict[str, np.ndarray]


HEAD_OFFSET = np.array([0.0, -0.28, 0.0])


def build_skeleton(chest: np.ndarray, held_wrist: Optional[np.ndarray] = None, held: Optional[Hand] = None) -> Skeleton:
    chest = np.asarray(chest, dtype=np.float64)
    shoulders, elbows, wrists, hips = {}, {}, {}, {}
    for hand in Hand:
        s = hand.side
        sh = chest + np.array([0.18 * s, -0.12, 0.0])
        shoulders[hand.prefix] = sh
        hips[hand.prefix] = chest + np.array([0.10 * s, 0.30, 0.0])
        if held is hand and held_wrist is not None:
            w = np.asarray(held_wrist, dtype=np.float64)
            # forearm runs outward, down and back from a raised hand
            e = w + np.array([0.07 * s, 0.12, 0.14])
        else:
            w = sh + np.array([0.06 * s, 0.52, 0.0])
            e = sh + np.array([0.04 * s, 0.27, 0.0])
        wrists[hand.prefix] = w
        elbows[hand.prefix] = e
    return Skeleton(chest, chest + HEAD_OFFSET, shoulders, elbows, wrists, hips)


def skeleton_keypoints(
    sk: Skeleton,
    geo: FaceGeometry,
    gaze: Gaze,
    camera: CameraIntrinsics,
    rng: np.random.Generator,
    person_ref: int,
    jitter_sigma: float,
    dropout_prob: float,
    head_yaw: float = 0.0,
) -> KeypointSet:
    pts3 = face_points_3d(geo, sk.head, gaze, head_yaw)
    pts3["head"] = sk.head
    for p in ("l", "r"):
        pts3[f"{p}shoulder"] = sk.shoulders[p]
        pts3[f"{p}elbow"] = sk.elbows[p]
        pts3[f"{p}wrist"] = sk.wrists[p]
        pts3[f"{p}hip"] = sk.hips[p]
    names = sorted(pts3)
    uv = camera.project(np.array([pts3[n] for n in names]))
    # draw every random number regardless of visibility so streams stay aligned
    scale = np.array([FACE_JITTER_SCALE if n in FACE_KEYPOINTS else 1.0 for n in names])
    jitter = rng.normal(0.0, 1.0, size=uv.shape) * (jitter_sigma * scale)[:, None]
    drop = rng.random(len(names)) < dropout_prob
    # detector confidence decays with distance and varies little between landmarks
    pts = np.array([pts3[n] for n in names])
    conf = np.clip(0.95 - 0.12 * (pts[:, 2] - 0.5), 0.6, 0.95) - rng.uniform(0.0, 0.02, size=len(names))
    out: dict[str, tuple[float, float, float]] = {}
    for i, n in enumerate(names):
        x, y = uv[i] + jitter[i]
        if drop[i] or not (0 <= x < camera.width and 0 <= y < camera.height):
            continue
        out[n] = (float(x), float(y), float(conf[i]))
    return KeypointSet(person_ref, out)
