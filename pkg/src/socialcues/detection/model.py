"""Per-class detector assembly, inference, NMS and serialisation."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from ..core import Annotation, BoundingBox, ClassRegistry, Detection, RgbdFrame, iou_matrix
from .bootstrap import FalkonParams, MinibootstrapConfig, minibootstrap_train
from .falkon import FalkonModel
from .features import FEATURE_DIM, MIN_ROI_AREA, extract_features
from .proposals import MAX_PROPOSALS, proposal_array
from .rls import DEFAULT_LAMBDA_RLS, RlsRefiner, box_deltas, rls_train

MAGIC = b"DETM"
FORMAT_VERSION = 1
POSITIVE_IOU = 0.6
BACKGROUND_IOU = 0.3
NMS_IOU = 0.3


@dataclass(frozen=True)
class DetectorConfig:
    bootstrap: MinibootstrapConfig = MinibootstrapConfig()
    falkon: FalkonParams = FalkonParams()
    lambda_rls: float = DEFAULT_LAMBDA_RLS
    score_threshold: float = 0.0
    nms_iou: float = NMS_IOU
    positive_iou: float = POSITIVE_IOU
    background_iou: float = BACKGROUND_IOU
    max_proposals: int = MAX_PROPOSALS


@dataclass
class ClassHead:
    classifier: FalkonModel
    refiner: RlsRefiner


@dataclass
class DetectionModel:
    registry: ClassRegistry
    heads: dict[str, ClassHead]
    score_threshold: float = 0.0
    nms_iou: float = NMS_IOU
    max_proposals: int = MAX_PROPOSALS

    def __post_init__(self):
        for name in self.heads:
            self.registry.check(name)

    @property
    def labels(self) -> list[str]:
        return [n for n in self.registry.names if n in self.heads]


def nms(boxes: np.ndarray, scores: np.ndarray, iou_thresh: float = NMS_IOU) -> np.ndarray:
    """Greedy NMS; equal scores are ordered by lower box coordinates first.

    Returns indices of kept boxes in processing order.
    """
    b = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    s = np.asarray(scores, dtype=np.float64)
    if len(b) == 0:
        return np.zeros(0, dtype=np.intp)
    order = np.lexsort((b[:, 3], b[:, 2], b[:, 1], b[:, 0], -s))
    ious = iou_matrix(b, b)
    alive = np.ones(len(b), dtype=bool)
    keep = []
    for i in order:
        if not alive[i]:
            continue
        keep.append(i)
        alive &= ~(ious[i] > iou_thresh)
    return np.array(keep, dtype=np.intp)


def _clip_boxes(b: np.ndarray, w: int, h: int) -> tuple[np.ndarray, np.ndarray]:
    c = b.copy()
    c[:, [0, 2]] = np.clip(c[:, [0, 2]], 0, w)
    c[:, [1, 3]] = np.clip(c[:, [1, 3]], 0, h)
    ok = (c[:, 2] > c[:, 0]) & (c[:, 3] > c[:, 1])
    return c, ok


@dataclass(frozen=True, eq=False)
class FrameRois:
    """Proposals of one frame and their features; reusable across models."""

    boxes: np.ndarray
    features: np.ndarray


def frame_rois(frame: RgbdFrame, max_proposals: int = MAX_PROPOSALS) -> FrameRois:
    boxes = proposal_array(frame, max_proposals)
    if len(boxes) == 0:
        return FrameRois(boxes, np.zeros((0, FEATURE_DIM)))
    return FrameRois(boxes, extract_features(frame, boxes))


def detect(model: DetectionModel, frame: RgbdFrame, rois: Optional[FrameRois] = None) -> list[Detection]:
    rois = rois if rois is not None else frame_rois(frame, model.max_proposals)
    boxes, X = rois.boxes, rois.features
    if len(boxes) == 0:
        return []
    out: list[Detection] = []
    for label in model.labels:
        head = model.heads[label]
        scores = head.classifier.decision(X)
        sel = np.flatnonzero(scores > model.score_threshold)
        if sel.size == 0:
            continue
        refined = head.refiner.refine(boxes[sel], X[sel])
        refined, ok = _clip_boxes(refined, frame.width, frame.height)
        sel, refined = sel[ok], refined[ok]
        for k in nms(refined, scores[sel], model.nms_iou):
            out.append(Detection(BoundingBox(*map(float, refined[k])), label, float(scores[sel[k]]), frame.index))
    out.sort(key=lambda d: (-d.score, d.label, d.box.as_tuple()))
    return out


@dataclass
class ClassData:
    positives: list[np.ndarray] = field(default_factory=list)
    reg_features: list[np.ndarray] = field(default_factory=list)
    reg_targets: list[np.ndarray] = field(default_factory=list)
    background: list[np.ndarray] = field(default_factory=list)


def collect_training_data(
    frames: Iterable[RgbdFrame],
    annotations: Sequence[Annotation],
    cfg: DetectorConfig = DetectorConfig(),
    data: Optional[dict[str, ClassData]] = None,
    rois: Optional[Mapping[int, FrameRois]] = None,
) -> dict[str, ClassData]:
    """Positive, regression and background features from annotated frames.

    ``rois`` optionally maps frame indices to precomputed proposals.
    """
    by_frame: dict[int, list[Annotation]] = {}
    for a in annotations:
        by_frame.setdefault(a.frame_index, []).append(a)
    data = {} if data is None else data
    for frame in frames:
        anns = by_frame.get(frame.index)
        if not anns:
            continue
        r = rois.get(frame.index) if rois is not None else None
        r = r if r is not None else frame_rois(frame, cfg.max_proposals)
        props, X = r.boxes, r.features
        gt = np.array([a.box.as_tuple() for a in anns])
        ious = iou_matrix(props, gt)
        for j, a in enumerate(anns):
            cd = data.setdefault(a.label, ClassData())
            g = gt[j : j + 1]
            pos = ious[:, j] >= cfg.positive_iou
            if (g[0, 2] - g[0, 0]) * (g[0, 3] - g[0, 1]) >= MIN_ROI_AREA:
                cd.positives.append(extract_features(frame, g))
            cd.positives.append(X[pos])
            cd.reg_features.append(X[pos])
            cd.reg_targets.append(box_deltas(props[pos], np.repeat(g, pos.sum(), axis=0)))
        bg = np.all(ious < cfg.background_iou, axis=1)
        data[anns[0].label].background.append(X[bg])
    return data


def _stack(parts: list[np.ndarray], d: int = FEATURE_DIM) -> np.ndarray:
    parts = [p for p in parts if len(p)]
    return np.vstack(parts) if parts else np.zeros((0, d))


def train_from_data(
    data: dict[str, ClassData],
    cfg: DetectorConfig = DetectorConfig(),
    registry: Optional[ClassRegistry] = None,
    seed: int = 0,
) -> DetectionModel:
    """One FALKON classifier and one refiner per class.

    A class's background pool is its own background RoIs plus every RoI
    collected for the other classes.
    """
    registry = registry if registry is not None else ClassRegistry()
    heads: dict[str, ClassHead] = {}
    labels = sorted(data)
    need = cfg.bootstrap.n_batches * cfg.bootstrap.batch_size
    for ci, label in enumerate(labels):
        registry.register(label)
        cd = data[label]
        pos = _stack(cd.positives)
        if len(pos) == 0:
            continue
        pool_parts = list(cd.background)
        for other in labels:
            if other != label:
                pool_parts += data[other].background + data[other].positives
        pool = _stack(pool_parts)
        rng = np.random.default_rng([seed, ci])
        pool = pool[rng.permutation(len(pool))[:need]]
        params = FalkonParams(cfg.falkon.M, cfg.falkon.sigma, cfg.falkon.lam, cfg.falkon.t_iters, seed + ci)
        clf = minibootstrap_train(pos, pool, cfg.bootstrap, params)
        rx, rt = _stack(cd.reg_features), _stack(cd.reg_targets, 4)
        ref = rls_train(rx, rt, cfg.lambda_rls) if len(rx) else RlsRefiner.identity(pos.shape[1])
        heads[label] = ClassHead(clf, ref)
    return DetectionModel(registry, heads, cfg.score_threshold, cfg.nms_iou, cfg.max_proposals)


def train_detector(
    frames: Iterable[RgbdFrame],
    annotations: Sequence[Annotation],
    cfg: DetectorConfig = DetectorConfig(),
    seed: int = 0,
) -> DetectionModel:
    return train_from_data(collect_training_data(frames, annotations, cfg), cfg, seed=seed)


def _write_array(buf: list[bytes], a: np.ndarray) -> None:
    buf.append(np.ascontiguousarray(a, dtype="<f8").tobytes())


def save_detector(model: DetectionModel, path) -> None:
    """Binary weights at ``path`` and the class registry at ``path + '.json'``."""
    path = Path(path)
    labels = model.labels
    buf = [MAGIC, struct.pack("<HH", FORMAT_VERSION, len(labels))]
    for label in labels:
        h = model.heads[label]
        c = h.classifier
        d = c.centers.shape[1]
        buf.append(struct.pack("<II", c.m, d))
        buf.append(struct.pack("<ddd", c.sigma, c.lam, h.refiner.lambda_rls))
        _write_array(buf, c.centers)
        _write_array(buf, c.alpha)
        _write_array(buf, h.refiner.W)
        _write_array(buf, h.refiner.bias)
    path.write_bytes(b"".join(buf))
    meta = {
        "format": "detection-model",
        "version": FORMAT_VERSION,
        "classes": labels,
        "registry": list(model.registry.names),
        "score_threshold": model.score_threshold,
        "nms_iou": model.nms_iou,
        "max_proposals": model.max_proposals,
    }
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=2))


def load_detector(path) -> DetectionModel:
    path = Path(path)
    meta = json.loads(Path(str(path) + ".json").read_text())
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError("not a detection model file")
    version, n = struct.unpack_from("<HH", raw, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported detection model version {version}")
    if n != len(meta["classes"]):
        raise ValueError("class registry does not match the weight file")
    off = 8

    def take(count: int) -> np.ndarray:
        nonlocal off
        a = np.frombuffer(raw, dtype="<f8", count=count, offset=off).astype(np.float64)
        off += 8 * count
        return a

    heads = {}
    for label in meta["classes"]:
        m, d = struct.unpack_from("<II", raw, off)
        off += 8
        sigma, lam, lam_rls = struct.unpack_from("<ddd", raw, off)
        off += 24
        centers = take(m * d).reshape(m, d)
        alpha = take(m)
        W = take(4 * d).reshape(4, d)
        bias = take(4)
        heads[label] = ClassHead(FalkonModel(centers, alpha, sigma, lam), RlsRefiner(W, bias, lam_rls))
    if off != len(raw):
        raise ValueError("trailing bytes in detection model file")
    registry = ClassRegistry(list(meta["registry"]))
    return DetectionModel(registry, heads, float(meta["score_threshold"]), float(meta["nms_iou"]), int(meta["max_proposals"]))
