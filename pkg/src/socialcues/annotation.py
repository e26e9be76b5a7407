"""Automatic ground-truth extraction: depth blobs around the teacher's hand, or nearest to the camera."""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from scipy import ndimage
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .core import Annotation, AnnotationSource, BoundingBox, CameraIntrinsics, RgbdFrame, box_from_coords
from .perception import KeypointSet

MAX_TRACK_JUMP = 0.15
HAND_WINDOW = 5
MAX_CONSECUTIVE_LOSSES = 3
INITIAL_WINDOW = 10


class Strategy(str, enum.Enum):
    HAND_PROXIMAL = "hand-proximal"
    DISTANCE_BASED = "distance-based"

    @property
    def source(self) -> AnnotationSource:
        return AnnotationSource(self.value)


class Connectivity(str, enum.Enum):
    FOUR = "four"
    EIGHT = "eight"


class AnnotationAborted(RuntimeError):
    def __init__(self, message: str, frame_index: int, annotations: list[Annotation]):
        super().__init__(message)
        self.frame_index = frame_index
        self.annotations = annotations


@dataclass(frozen=True)
class AnnotatorConfig:
    strategy: Strategy = Strategy.HAND_PROXIMAL
    depth_band: float = 0.30
    hand_radius: float = 0.25
    min_blob_px: int = 20
    connectivity: Connectivity = Connectivity.FOUR
    # largest depth step between neighbouring pixels of one hand-proximal blob
    continuity_step: float = 0.05
    corridor_px: float = 10.0
    camera: CameraIntrinsics = field(default_factory=CameraIntrinsics)

    def __post_init__(self):
        if not self.depth_band > 0:
            raise ValueError("depth_band must be positive")
        if not self.hand_radius > 0:
            raise ValueError("hand_radius must be positive")
        if self.min_blob_px < 1:
            raise ValueError("min_blob_px must be at least 1")
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        object.__setattr__(self, "connectivity", Connectivity(self.connectivity))

    @classmethod
    def for_strategy(cls, strategy: Union[Strategy, str], **kw) -> "AnnotatorConfig":
        strategy = Strategy(strategy)
        band = 0.30 if strategy is Strategy.HAND_PROXIMAL else 0.05
        return cls(strategy=strategy, **{"depth_band": band, **kw})


@dataclass(frozen=True, eq=False)
class DepthBlob:
    mask: np.ndarray  # (h, w) bool
    centroid_3d: tuple[float, float, float]
    mean_depth: float
    band: tuple[float, float]  # depth interval every member lies in

    @property
    def size(self) -> int:
        return int(self.mask.sum())

    @property
    def pixels(self) -> np.ndarray:
        """Member pixels as ``(x, y)`` rows."""
        ys, xs = np.nonzero(self.mask)
        return np.stack([xs, ys], axis=1)

    @property
    def box(self) -> BoundingBox:
        ys, xs = np.nonzero(self.mask)
        return box_from_coords(xs, ys)


@lru_cache(maxsize=8)
def _pixel_rays(cam: CameraIntrinsics, h: int, w: int) -> np.ndarray:
    """Back-projection of every pixel centre at unit depth, shape (h, w, 3)."""
    vv, uu = np.mgrid[0:h, 0:w]
    rays = cam.back_project(uu, vv, np.ones((h, w)))
    rays.setflags(write=False)
    return rays


def _points(frame: RgbdFrame, cam: CameraIntrinsics) -> np.ndarray:
    return _pixel_rays(cam, frame.height, frame.width) * frame.depth[..., None].astype(np.float64)


def _structure(c: Connectivity) -> np.ndarray:
    return ndimage.generate_binary_structure(2, 1 if c is Connectivity.FOUR else 2)


def _make_blob(mask: np.ndarray, frame: RgbdFrame, cam: CameraIntrinsics, band: tuple[float, float]) -> DepthBlob:
    ys, xs = np.nonzero(mask)
    d = frame.depth[ys, xs].astype(np.float64)
    pts = cam.back_project(xs, ys, d)
    c = pts.mean(axis=0)
    return DepthBlob(mask, (float(c[0]), float(c[1]), float(c[2])), float(d.mean()), band)


def _component_with(mask: np.ndarray, seed: tuple[int, int], conn: Connectivity) -> np.ndarray:
    labels, _ = ndimage.label(mask, structure=_structure(conn))
    lab = labels[seed]
    return labels == lab if lab else np.zeros_like(mask)


def _continuous_component(
    allowed: np.ndarray, depth: np.ndarray, seed: tuple[int, int], step: float, conn: Connectivity
) -> np.ndarray:
    """Pixels of ``allowed`` reachable from ``seed`` through neighbour steps of at most ``step`` in depth."""
    ys, xs = np.nonzero(allowed)
    if len(ys) == 0:
        return np.zeros_like(allowed)
    h, w = allowed.shape
    index = np.full((h, w), -1, dtype=np.int64)
    index[ys, xs] = np.arange(len(ys))
    d = depth.astype(np.float64)
    offsets = [(0, 1), (1, 0)] + ([(1, 1), (1, -1)] if conn is Connectivity.EIGHT else [])
    rows, cols = [], []
    for dy, dx in offsets:
        y2, x2 = ys + dy, xs + dx
        ok = (y2 < h) & (x2 >= 0) & (x2 < w)
        a = np.flatnonzero(ok)
        b = index[y2[ok], x2[ok]]
        keep = b >= 0
        a, b = a[keep], b[keep]
        close = np.abs(d[ys[a], xs[a]] - d[ys[b], xs[b]]) <= step
        rows.append(a[close])
        cols.append(b[close])
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    graph = coo_matrix((np.ones(len(r), dtype=np.int8), (r, c)), shape=(len(ys), len(ys)))
    _, labels = connected_components(graph, directed=False)
    out = np.zeros_like(allowed)
    s = index[seed]
    if s < 0:
        return out
    members = labels == labels[s]
    out[ys[members], xs[members]] = True
    return out


def segment_distance_based(frame: RgbdFrame, cfg: AnnotatorConfig) -> Optional[DepthBlob]:
    """Blob grown from the globally nearest valid surface.

    The running minimum of a fill seeded at the global minimum never moves,
    so the fill is the seed's component of ``depth <= seed + band``.
    """
    valid = frame.valid_mask
    if valid.sum() < cfg.min_blob_px:
        return None
    return _nearest_blob(frame, valid, cfg)


def _nearest_blob(frame: RgbdFrame, allowed: np.ndarray, cfg: AnnotatorConfig) -> Optional[DepthBlob]:
    """Seed at the nearest ``allowed`` pixel of the 3x3 median depth, so lone noise spikes cannot seed."""
    ys, xs = np.nonzero(allowed)
    if len(ys) == 0:
        return None
    y0, y1 = max(ys.min() - 1, 0), ys.max() + 2
    x0, x1 = max(xs.min() - 1, 0), xs.max() + 2
    d = np.where(frame.valid_mask[y0:y1, x0:x1], frame.depth[y0:y1, x0:x1], np.inf)
    smooth = ndimage.median_filter(d, size=3, mode="nearest")
    smooth = np.where(allowed[y0:y1, x0:x1] & np.isfinite(smooth), smooth, np.inf)
    flat = int(np.argmin(smooth))
    if not np.isfinite(smooth.flat[flat]):
        return None
    sy, sx = np.unravel_index(flat, smooth.shape)
    seed = (int(sy + y0), int(sx + x0))
    smooth_seed = float(smooth[sy, sx])
    lo = min(smooth_seed, float(frame.depth[seed]))
    mask = _component_with(allowed & (frame.depth <= lo + cfg.depth_band), seed, cfg.connectivity)
    if mask.sum() < cfg.min_blob_px:
        return None
    members = frame.depth[mask]
    return _make_blob(mask, frame, cfg.camera, (float(members.min()), lo + cfg.depth_band))


def _hand_name(hand) -> str:
    v = getattr(hand, "value", hand)
    if v not in ("left", "right"):
        raise ValueError(f"hand must be left or right, got {hand!r}")
    return ("l" if v == "left" else "r") + "wrist"


def hand_point(frame: RgbdFrame, kp: KeypointSet, hand, cam: CameraIntrinsics) -> Optional[np.ndarray]:
    """3D point of the selected wrist: nearest valid depth in a 5x5 window around its pixel."""
    p = kp.xy(_hand_name(hand))
    if p is None:
        return None
    u, v = int(np.floor(p[0])), int(np.floor(p[1]))
    r = HAND_WINDOW // 2
    y0, y1 = max(v - r, 0), min(v + r + 1, frame.height)
    x0, x1 = max(u - r, 0), min(u + r + 1, frame.width)
    if y0 >= y1 or x0 >= x1:
        return None
    win = frame.depth[y0:y1, x0:x1]
    valid = frame.valid_mask[y0:y1, x0:x1]
    if not valid.any():
        return None
    z = float(win[valid].min())
    return cam.back_project(p[0] - 0.5, p[1] - 0.5, z)


def arm_corridor(shape: tuple[int, int], kp: KeypointSet, hand, width_px: float) -> np.ndarray:
    """Pixels within ``width_px / 2`` of the wrist-elbow segment, cut flat at the wrist."""
    out = np.zeros(shape, dtype=bool)
    prefix = _hand_name(hand)[0]
    w, e = kp.xy(prefix + "wrist"), kp.xy(prefix + "elbow")
    if w is None or e is None:
        return out
    seg = e - w
    L2 = float(seg @ seg)
    if L2 < 1e-9:
        return out
    h_, w_ = shape
    half = width_px / 2.0
    x0 = int(max(np.floor(min(w[0], e[0]) - half - 1), 0))
    x1 = int(min(np.ceil(max(w[0], e[0]) + half + 1), w_))
    y0 = int(max(np.floor(min(w[1], e[1]) - half - 1), 0))
    y1 = int(min(np.ceil(max(w[1], e[1]) + half + 1), h_))
    if x0 >= x1 or y0 >= y1:
        return out
    vv, uu = np.mgrid[y0:y1, x0:x1]
    px = np.stack([uu + 0.5 - w[0], vv + 0.5 - w[1]], axis=-1)
    t = (px @ seg) / L2
    dist = np.abs(px[..., 0] * seg[1] - px[..., 1] * seg[0]) / np.sqrt(L2)
    out[y0:y1, x0:x1] = (t >= 0.0) & (t <= 1.0) & (dist <= half)
    return out


def _hand_blob(
    frame: RgbdFrame,
    anchor: np.ndarray,
    cfg: AnnotatorConfig,
    exclude: Optional[np.ndarray],
) -> Optional[DepthBlob]:
    pts = _points(frame, cfg.camera)
    valid = frame.valid_mask
    dist = np.linalg.norm(pts - anchor, axis=-1)
    cand = valid & (dist <= cfg.hand_radius)
    if exclude is not None:
        cand &= ~exclude
    if not cand.any():
        return None
    seed = np.unravel_index(int(np.argmin(np.where(cand, dist, np.inf))), dist.shape)
    d0 = float(frame.depth[seed])
    allowed = cand & (np.abs(frame.depth - d0) <= cfg.depth_band)
    mask = _continuous_component(allowed, frame.depth, seed, cfg.continuity_step, cfg.connectivity)
    if mask.sum() < cfg.min_blob_px:
        return None
    return _make_blob(mask, frame, cfg.camera, (d0 - cfg.depth_band, d0 + cfg.depth_band))


def segment_hand_proximal(frame: RgbdFrame, teacher_kp: Optional[KeypointSet], hand, cfg: AnnotatorConfig) -> Optional[DepthBlob]:
    """Blob of the object held in ``hand``, grown from the candidate nearest the wrist in 3D."""
    if teacher_kp is None:
        return None
    hp = hand_point(frame, teacher_kp, hand, cfg.camera)
    if hp is None:
        return None
    corridor = arm_corridor(frame.depth.shape, teacher_kp, hand, cfg.corridor_px)
    return _hand_blob(frame, hp, cfg, corridor)


def track_blob(
    prev: DepthBlob,
    frame: RgbdFrame,
    cfg: AnnotatorConfig,
    teacher_kp: Optional[KeypointSet] = None,
    hand=None,
) -> Optional[DepthBlob]:
    """Re-segment around the previous centroid; ``None`` when the track is lost."""
    if prev.size == 0:
        raise ValueError("cannot track an empty blob")
    anchor = np.asarray(prev.centroid_3d)
    if cfg.strategy is Strategy.HAND_PROXIMAL:
        corridor = None
        if teacher_kp is not None and hand is not None:
            corridor = arm_corridor(frame.depth.shape, teacher_kp, hand, cfg.corridor_px)
        blob = _hand_blob(frame, anchor, cfg, corridor)
    else:
        pts = _points(frame, cfg.camera)
        cand = frame.valid_mask & (np.linalg.norm(pts - anchor, axis=-1) <= cfg.hand_radius)
        if not cand.any():
            return None
        blob = _nearest_blob(frame, cand, cfg)
    if blob is None:
        return None
    if np.linalg.norm(np.asarray(blob.centroid_3d) - anchor) >= MAX_TRACK_JUMP:
        return None
    return blob


def segment(frame: RgbdFrame, kp: Optional[KeypointSet], hand, cfg: AnnotatorConfig) -> Optional[DepthBlob]:
    if cfg.strategy is Strategy.HAND_PROXIMAL:
        return segment_hand_proximal(frame, kp, hand, cfg)
    return segment_distance_based(frame, cfg)


@dataclass(frozen=True, eq=False)
class AnnotatorState:
    """Incremental annotator: current blob, whether it has started, consecutive losses."""

    blob: Optional[DepthBlob] = None
    started: bool = False
    losses: int = 0
    frames_seen: int = 0


def annotate_step(
    st: AnnotatorState,
    frame: RgbdFrame,
    kp: Optional[KeypointSet],
    label: str,
    cfg: AnnotatorConfig,
    hand=None,
) -> tuple[AnnotatorState, Optional[Annotation]]:
    """One frame of segment-then-track annotation.

    Raises ``AnnotationAborted`` (with no annotations attached) when no initial
    segmentation appears within the first frames or the object is lost for 3
    consecutive frames.
    """
    n = st.frames_seen + 1
    if not st.started:
        blob = segment(frame, kp, hand, cfg)
        if blob is None:
            if n >= INITIAL_WINDOW:
                raise AnnotationAborted("no initial segmentation in the first frames", frame.index, [])
            return replace(st, frames_seen=n), None
        st = AnnotatorState(blob, True, 0, n)
    else:
        new = track_blob(st.blob, frame, cfg, kp, hand)
        if new is None:
            new = segment(frame, kp, hand, cfg)
        if new is None:
            losses = st.losses + 1
            if losses >= MAX_CONSECUTIVE_LOSSES:
                raise AnnotationAborted(f"object lost for {losses} frames", frame.index, [])
            return replace(st, losses=losses, frames_seen=n), None
        st = AnnotatorState(new, True, 0, n)
    return st, Annotation(frame.index, st.blob.box, label, cfg.strategy.source, st.blob.size)


def _backfill(blob: DepthBlob, earlier, label: str, cfg: AnnotatorConfig, hand) -> list[Annotation]:
    """Track the first blob backwards over the frames seen before it was found."""
    out = []
    for frame, kp in reversed(earlier):
        blob = track_blob(blob, frame, cfg, kp, hand)
        if blob is None:
            break
        out.append(Annotation(frame.index, blob.box, label, cfg.strategy.source, blob.size))
    return out[::-1]


def annotate_sequence(
    frames: Iterable[RgbdFrame],
    keypoints: Iterable[Optional[KeypointSet]],
    label: str,
    cfg: AnnotatorConfig,
    hand=None,
) -> list[Annotation]:
    """Segment once, then track; re-seed on loss and abort after 3 consecutive losses.

    Frames before the initial segmentation are recovered by tracking the first
    blob backwards.

    ``keypoints`` yields the teacher's keypoints per frame (``None`` when unseen).
    """
    if cfg.strategy is Strategy.HAND_PROXIMAL and hand is None:
        raise ValueError("hand-proximal annotation needs the selected hand")
    out: list[Annotation] = []
    st = AnnotatorState()
    waiting: list[tuple[RgbdFrame, Optional[KeypointSet]]] = []
    for frame, kp in zip(frames, keypoints):
        try:
            st, ann = annotate_step(st, frame, kp, label, cfg, hand)
        except AnnotationAborted as exc:
            raise AnnotationAborted(str(exc), exc.frame_index, out) from None
        if not st.started:
            waiting.append((frame, kp))
            continue
        if waiting:
            out.extend(_backfill(st.blob, waiting, label, cfg, hand))
            waiting = []
        if ann is not None:
            out.append(ann)
    if not st.started:
        raise AnnotationAborted("sequence ended before an initial segmentation", -1, out)
    return out


def write_annotations_jsonl(anns: Sequence[Annotation], path) -> None:
    with open(path, "w") as fh:
        for a in anns:
            fh.write(json.dumps(a.to_json()) + "\n")


def read_annotations_jsonl(path) -> list[Annotation]:
    out = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            out.append(Annotation.from_json(json.loads(line)))
    return out
