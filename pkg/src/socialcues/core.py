"""Geometry, image and annotation primitives shared by the whole pipeline.

Boxes follow the half-open pixel convention ``[x_min, x_max) x [y_min, y_max)``
so that ``area = (x_max - x_min) * (y_max - y_min)``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

MIN_VALID_DEPTH = 0.1
MAX_VALID_DEPTH = 10.0


class InvalidBoxError(ValueError):
    pass


@dataclass(frozen=True)
class BoundingBox:
    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        vals = (self.x_min, self.y_min, self.x_max, self.y_max)
        if not all(np.isfinite(v) for v in vals):
            raise InvalidBoxError(f"non-finite box {vals}")
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise InvalidBoxError(f"box has no area: {vals}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)

    def as_array(self) -> np.ndarray:
        return np.array(self.as_tuple(), dtype=np.float64)

    def fits_in(self, width: float, height: float) -> bool:
        return self.x_min >= 0 and self.y_min >= 0 and self.x_max <= width and self.y_max <= height

    @classmethod
    def from_seq(cls, seq) -> "BoundingBox":
        x0, y0, x1, y1 = (float(v) for v in seq)
        return cls(x0, y0, x1, y1)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    ih = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between two ``(n, 4)`` and ``(m, 4)`` box arrays."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def clip_box(b: BoundingBox, w: float, h: float) -> Optional[BoundingBox]:
    """Intersect ``b`` with the frame ``[0, w] x [0, h]``; ``None`` if nothing is left."""
    if w <= 0 or h <= 0:
        raise ValueError("frame dimensions must be positive")
    x0, y0 = max(b.x_min, 0.0), max(b.y_min, 0.0)
    x1, y1 = min(b.x_max, float(w)), min(b.y_max, float(h))
    if x1 <= x0 or y1 <= y0:
        return None
    return BoundingBox(x0, y0, x1, y1)


def box_from_pixel_set(pixels: Iterable[tuple[int, int]]) -> BoundingBox:
    pts = np.asarray(list(pixels), dtype=np.int64)
    if pts.size == 0:
        raise ValueError("empty pixel set")
    return box_from_coords(pts[:, 0], pts[:, 1])


def box_from_coords(xs: np.ndarray, ys: np.ndarray) -> BoundingBox:
    """Tight box around pixel coordinates; each pixel covers ``[x, x+1)``."""
    if len(xs) == 0:
        raise ValueError("empty pixel set")
    return BoundingBox(float(xs.min()), float(ys.min()), float(xs.max()) + 1.0, float(ys.max()) + 1.0)


def box_from_mask(mask: np.ndarray) -> BoundingBox:
    ys, xs = np.nonzero(mask)
    return box_from_coords(xs, ys)


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole camera; ``Y`` points down, ``Z`` forward."""

    width: int = 320
    height: int = 240
    focal: float = 277.0
    cx: float = 160.0
    cy: float = 120.0

    def project(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=np.float64)
        z = pts[..., 2]
        u = self.focal * pts[..., 0] / z + self.cx
        v = self.focal * pts[..., 1] / z + self.cy
        return np.stack([u, v], axis=-1)

    def back_project(self, u, v, z) -> np.ndarray:
        """Pixel centres ``(u + 0.5, v + 0.5)`` at depth ``z`` to 3D points."""
        u = np.asarray(u, dtype=np.float64) + 0.5
        v = np.asarray(v, dtype=np.float64) + 0.5
        z = np.asarray(z, dtype=np.float64)
        x = (u - self.cx) * z / self.focal
        y = (v - self.cy) * z / self.focal
        return np.stack([x, y, z], axis=-1)

    def scaled_to(self, width: int, height: int) -> "CameraIntrinsics":
        s = width / self.width
        return CameraIntrinsics(width, height, self.focal * s, self.cx * s, self.cy * height / self.height)

    def to_dict(self) -> dict:
        return {"width": self.width, "height": self.height, "focal": self.focal, "cx": self.cx, "cy": self.cy}


@dataclass(frozen=True, eq=False)
class RgbdFrame:
    rgb: np.ndarray  # (h, w, 3) uint8
    depth: np.ndarray  # (h, w) float32 meters, 0.0 marks an invalid reading
    timestamp: float
    index: int

    def __post_init__(self):
        if self.rgb.shape[:2] != self.depth.shape or self.rgb.ndim != 3 or self.rgb.shape[2] != 3:
            raise ValueError(f"rgb {self.rgb.shape} and depth {self.depth.shape} disagree")
        if self.rgb.dtype != np.uint8:
            raise ValueError("rgb must be uint8")
        if np.any(self.depth < 0) or not np.all(np.isfinite(self.depth)):
            raise ValueError("depth must be finite and non-negative")
        self.rgb.setflags(write=False)
        self.depth.setflags(write=False)

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def valid_mask(self) -> np.ndarray:
        return (self.depth > MIN_VALID_DEPTH) & (self.depth <= MAX_VALID_DEPTH)


class AnnotationSource(str, enum.Enum):
    MANUAL = "manual"
    HAND_PROXIMAL = "hand-proximal"
    DISTANCE_BASED = "distance-based"


@dataclass(frozen=True)
class Annotation:
    frame_index: int
    box: BoundingBox
    label: str
    source: AnnotationSource = AnnotationSource.MANUAL
    blob_pixels: int = 0

    def to_json(self) -> dict:
        return {
            "frame_index": self.frame_index,
            "box": list(self.box.as_tuple()),
            "label": self.label,
            "source": self.source.value,
            "blob_pixels": self.blob_pixels,
        }

    @classmethod
    def from_json(cls, d: dict) -> "Annotation":
        return cls(
            frame_index=int(d["frame_index"]),
            box=BoundingBox.from_seq(d["box"]),
            label=d["label"],
            source=AnnotationSource(d.get("source", "manual")),
            blob_pixels=int(d.get("blob_pixels", 0)),
        )


@dataclass(frozen=True)
class Detection:
    box: BoundingBox
    label: str
    score: float
    frame_index: int = -1

    def __post_init__(self):
        if not np.isfinite(self.score):
            raise ValueError("detection score must be finite")


@dataclass
class ClassRegistry:
    """Ordered set of class names known to a session."""

    names: list[str] = field(default_factory=list)

    def register(self, name: str) -> int:
        if name not in self.names:
            self.names.append(name)
        return self.names.index(name)

    def __contains__(self, name: str) -> bool:
        return name in self.names

    def __len__(self) -> int:
        return len(self.names)

    def check(self, label: str) -> None:
        if label not in self.names:
            raise KeyError(f"label {label!r} is not registered")
