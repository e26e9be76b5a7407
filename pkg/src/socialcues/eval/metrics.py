"""COCO-style average precision and annotation quality scoring."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from ..core import Annotation, BoundingBox, Detection, iou, iou_matrix

RECALL_POINTS = np.linspace(0.0, 1.0, 101)


class NoEvaluableClassError(ValueError):
    pass


class IndexMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class PrCurve:
    precision: np.ndarray
    recall: np.ndarray
    ap: float  # NaN when the class has no ground truth
    n_gt: int
    n_det: int

    @property
    def evaluable(self) -> bool:
        return self.n_gt > 0

    def to_json(self) -> dict:
        return {
            "ap": None if not self.evaluable else self.ap,
            "n_gt": self.n_gt,
            "n_det": self.n_det,
            "precision": self.precision.tolist(),
            "recall": self.recall.tolist(),
        }


def interpolated_ap(precision: np.ndarray, recall: np.ndarray) -> float:
    """101-point interpolated area under the precision/recall curve."""
    if len(precision) == 0:
        return 0.0
    env = np.maximum.accumulate(np.asarray(precision, dtype=np.float64)[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    q = np.where(idx < len(env), env[np.minimum(idx, len(env) - 1)], 0.0)
    return float(q.mean())


def _match(dets: Sequence[Detection], gts: Sequence, iou_thresh: float) -> np.ndarray:
    """Greedy matching in score order; returns a true-positive flag per det."""
    by_frame: dict[int, list[BoundingBox]] = {}
    for g in gts:
        by_frame.setdefault(g.frame_index, []).append(g.box)
    used = {k: np.zeros(len(v), dtype=bool) for k, v in by_frame.items()}
    tp = np.zeros(len(dets), dtype=bool)
    for k, d in enumerate(dets):
        boxes = by_frame.get(d.frame_index)
        if not boxes:
            continue
        ious = iou_matrix([d.box.as_tuple()], [b.as_tuple() for b in boxes])[0]
        ious[used[d.frame_index]] = -1.0
        j = int(np.argmax(ious))
        if ious[j] >= iou_thresh:
            used[d.frame_index][j] = True
            tp[k] = True
    return tp


def sort_detections(dets: Sequence[Detection]) -> list[Detection]:
    """Score descending; ties by frame index then box coordinates."""
    return sorted(dets, key=lambda d: (-d.score, d.frame_index, d.box.as_tuple()))


def average_precision(dets: Sequence[Detection], gts: Sequence[Annotation], iou_thresh: float = 0.5) -> PrCurve:
    labels = {d.label for d in dets} | {g.label for g in gts}
    if len(labels) > 1:
        raise ValueError(f"average_precision expects a single class, got {sorted(labels)}")
    dets = sort_detections(dets)
    n_gt = len(gts)
    if n_gt == 0:
        return PrCurve(np.zeros(0), np.zeros(0), float("nan"), 0, len(dets))
    tp = _match(dets, gts, iou_thresh)
    ctp = np.cumsum(tp)
    precision = ctp / np.arange(1, len(dets) + 1) if len(dets) else np.zeros(0)
    recall = ctp / n_gt if len(dets) else np.zeros(0)
    return PrCurve(precision, recall.astype(np.float64), interpolated_ap(precision, recall), n_gt, len(dets))


def mean_ap(per_class: Mapping[str, PrCurve]) -> float:
    aps = [c.ap for c in per_class.values() if c.evaluable]
    if not aps:
        raise NoEvaluableClassError("no class has ground truth")
    return float(np.mean(aps))


def per_class_ap(dets: Sequence[Detection], gts: Sequence[Annotation], labels: Sequence[str], iou_thresh: float = 0.5) -> dict[str, PrCurve]:
    return {
        c: average_precision([d for d in dets if d.label == c], [g for g in gts if g.label == c], iou_thresh)
        for c in labels
    }


@dataclass(frozen=True)
class AnnotationQuality:
    mean_iou: float
    ap: float
    n_annotations: int
    n_truth: int


def annotation_quality(auto: Sequence[Annotation], truth: Sequence, label: Optional[str] = None) -> AnnotationQuality:
    """Score automatic annotations as confidence-1 detections against truth.

    ``truth`` holds simulator ground-truth records (``frame_index`` and
    ``true_object_box``); frames without a visible object carry no truth box.
    Mean IoU is over the produced annotations, counting 0 where no truth exists.
    """
    truth_by_frame = {r.frame_index: r.true_object_box for r in truth}
    for a in auto:
        if a.frame_index not in truth_by_frame:
            raise IndexMismatchError(f"annotation for frame {a.frame_index} has no truth record")
    name = label if label is not None else (auto[0].label if auto else "object")
    gts = [Annotation(i, b, name) for i, b in truth_by_frame.items() if b is not None]
    dets = [Detection(a.box, name, 1.0, a.frame_index) for a in auto]
    ious = [iou(a.box, truth_by_frame[a.frame_index]) if truth_by_frame[a.frame_index] is not None else 0.0 for a in auto]
    curve = average_precision(dets, gts)
    ap = curve.ap if curve.evaluable else 0.0
    return AnnotationQuality(float(np.mean(ious)) if ious else 0.0, float(ap), len(auto), len(gts))
