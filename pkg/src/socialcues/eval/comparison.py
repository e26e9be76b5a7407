"""Annotation-strategy comparison: annotate, train per size split, test on fresh close-range data."""
from __future__ import annotations

import csv
import hashlib
import io as _io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..annotation import AnnotationAborted, AnnotatorConfig, Strategy, annotate_sequence
from ..core import Annotation, Detection
from ..detection import DetectorConfig, FrameRois, collect_training_data, detect, frame_rois, train_from_data
from ..io import DataError, LoadedSequence, load_dataset, write_dataset
from ..simworld import SIZE_SPLITS, ScenarioKind, SizeClass, make_script
from .metrics import annotation_quality, mean_ap, per_class_ap

TEST_SET = "test"
SEED_STRIDE = 1000
TEST_SEED_OFFSET = 500
FRAME_ID_STRIDE = 1_000_000


@dataclass(frozen=True)
class ComparisonConfig:
    scenarios: tuple[str, ...] = tuple(k.value for k in ScenarioKind)
    strategies: tuple[str, ...] = tuple(s.value for s in Strategy)
    splits: tuple[str, ...] = tuple(s.value for s in SizeClass)
    seed: int = 0
    n_train_frames: int = 300
    n_test_frames: int = 100
    train_stride: int = 3
    detector: DetectorConfig = DetectorConfig()

    def labels(self) -> list[str]:
        return [l for s in self.splits for l in SIZE_SPLITS[SizeClass(s)]]

    def to_json(self) -> dict:
        return asdict(self)

    @property
    def run_id(self) -> str:
        blob = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def training_scripts(scenario: str, cfg: ComparisonConfig) -> list:
    return [
        make_script(scenario, label, cfg.seed * SEED_STRIDE + i, n_frames=cfg.n_train_frames)
        for i, label in enumerate(cfg.labels())
    ]


def test_scripts(cfg: ComparisonConfig) -> list:
    return [
        make_script(ScenarioKind.CONSTRAINED, label, cfg.seed * SEED_STRIDE + TEST_SEED_OFFSET + i, n_frames=cfg.n_test_frames)
        for i, label in enumerate(cfg.labels())
    ]


def prepare_datasets(root, cfg: ComparisonConfig, force: bool = False) -> None:
    """Render every dataset the comparison needs that is not already on disk."""
    root = Path(root)
    for scenario in cfg.scenarios:
        if force or not (root / scenario / "manifest.json").exists():
            write_dataset(root / scenario, training_scripts(scenario, cfg), force=True)
    if force or not (root / TEST_SET / "manifest.json").exists():
        write_dataset(root / TEST_SET, test_scripts(cfg), force=True)


def annotate_loaded(seq: LoadedSequence, strategy: str, annotator: Optional[AnnotatorConfig] = None) -> tuple[list[Annotation], bool]:
    """Annotations for a loaded sequence; aborted runs keep their partial output."""
    cfg = annotator if annotator is not None else AnnotatorConfig.for_strategy(strategy)
    try:
        return annotate_sequence(seq.frames, seq.teacher_keypoints(), seq.label, cfg, seq.script.teacher.held_hand), False
    except AnnotationAborted as exc:
        return list(exc.annotations), True


@dataclass
class ReportCell:
    scenario: str
    strategy: str
    annotation_mean_iou: Optional[float]  # None for cells that only score a detector
    annotation_map: Optional[float]
    annotation_per_object: dict[str, dict] = field(default_factory=dict)
    split_map: dict[str, float] = field(default_factory=dict)
    class_ap: dict[str, float] = field(default_factory=dict)


@dataclass
class EvalReport:
    run_id: str
    config: dict
    cells: list[ReportCell]

    def cell(self, scenario: str, strategy: str) -> ReportCell:
        for c in self.cells:
            if c.scenario == scenario and c.strategy == strategy:
                return c
        raise KeyError((scenario, strategy))

    def to_json(self) -> dict:
        return {"run_id": self.run_id, "config": self.config, "cells": [asdict(c) for c in self.cells]}

    @classmethod
    def from_json(cls, d: dict) -> "EvalReport":
        return cls(d["run_id"], d["config"], [ReportCell(**c) for c in d["cells"]])

    def csv_rows(self) -> list[list]:
        rows = [["run_id", "scenario", "strategy", "metric", "key", "value"]]
        for c in self.cells:
            base = [self.run_id, c.scenario, c.strategy]
            if c.annotation_mean_iou is not None:
                rows.append(base + ["annotation_mean_iou", "", f"{c.annotation_mean_iou:.6f}"])
                rows.append(base + ["annotation_map", "", f"{c.annotation_map:.6f}"])
            for k, v in c.split_map.items():
                rows.append(base + ["split_map", k, f"{v:.6f}"])
            for k, v in c.class_ap.items():
                rows.append(base + ["class_ap", k, f"{v:.6f}"])
        return rows

    def to_csv(self) -> str:
        buf = _io.StringIO()
        csv.writer(buf, lineterminator="\n").writerows(self.csv_rows())
        return buf.getvalue()

    def save(self, stem) -> tuple[Path, Path]:
        stem = Path(stem)
        j, c = stem.with_suffix(".json"), stem.with_suffix(".csv")
        j.write_text(json.dumps(self.to_json(), indent=2, sort_keys=True))
        c.write_text(self.to_csv())
        return j, c

    def summary(self) -> str:
        order = [x.value for x in SizeClass] + ["all"]
        splits = sorted({k for c in self.cells for k in c.split_map}, key=lambda s: (order.index(s) if s in order else len(order), s))
        head = f"{'scenario':<18}{'strategy':<16}{'ann IoU':>9}{'ann mAP':>9}" + "".join(f"{s:>9}" for s in splits)
        lines = [head, "-" * len(head)]
        for c in self.cells:
            ann = "" if c.annotation_mean_iou is None else f"{c.annotation_mean_iou:>9.3f}{100 * c.annotation_map:>9.1f}"
            lines.append(
                f"{c.scenario:<18}{c.strategy:<16}{ann:>18}"
                + "".join(f"{100 * c.split_map[s]:>9.1f}" if s in c.split_map else f"{'-':>9}" for s in splits)
            )
        return "\n".join(lines)


def _load(root: Path, name: str) -> dict[str, LoadedSequence]:
    if not (root / name / "manifest.json").exists():
        raise DataError(f"missing dataset {root / name}")
    _, seqs = load_dataset(root / name)
    return {s.label: s for s in seqs}


def evaluate_split(model, test: Sequence[LoadedSequence], rois: dict) -> tuple[float, dict[str, float]]:
    labels = [s.label for s in test]
    dets: list[Detection] = []
    gts: list[Annotation] = []
    for s in test:
        for f, r in zip(s.frames, s.truth):
            # frame indices restart per sequence; offset them so matches stay in-sequence
            fid = FRAME_ID_STRIDE * labels.index(s.label) + f.index
            for d in detect(model, f, rois[(s.name, f.index)]):
                dets.append(Detection(d.box, d.label, d.score, fid))
            if r.true_object_box is not None:
                gts.append(Annotation(fid, r.true_object_box, s.label))
    curves = per_class_ap(dets, gts, labels)
    return mean_ap(curves), {k: float(v.ap) for k, v in curves.items() if v.evaluable}


def run_comparison(root, cfg: ComparisonConfig = ComparisonConfig(), seed: int = 0) -> EvalReport:
    root = Path(root)
    test = _load(root, TEST_SET)
    test_rois = {(s.name, f.index): frame_rois(f, cfg.detector.max_proposals) for s in test.values() for f in s.frames}
    cells = []
    for scenario in cfg.scenarios:
        train = _load(root, scenario)
        roi_cache: dict[tuple[str, int], FrameRois] = {}
        for strategy in cfg.strategies:
            anns = {}
            per_obj = {}
            for label in cfg.labels():
                seq = train[label]
                a, aborted = annotate_loaded(seq, strategy)
                anns[label] = a
                q = annotation_quality(a, seq.truth, label)
                per_obj[label] = {"mean_iou": q.mean_iou, "ap": q.ap, "n": q.n_annotations, "aborted": aborted}
            cell = ReportCell(
                scenario,
                strategy,
                float(np.mean([v["mean_iou"] for v in per_obj.values()])),
                float(np.mean([v["ap"] for v in per_obj.values()])),
                per_obj,
            )
            for split in cfg.splits:
                data: dict = {}
                labels = SIZE_SPLITS[SizeClass(split)]
                for label in labels:
                    seq = train[label]
                    chosen = [a for a in anns[label] if a.frame_index % cfg.train_stride == 0]
                    frames = {f.index: f for f in seq.frames}
                    rois = {}
                    for a in chosen:
                        key = (seq.name, a.frame_index)
                        if key not in roi_cache:
                            roi_cache[key] = frame_rois(frames[a.frame_index], cfg.detector.max_proposals)
                        rois[a.frame_index] = roi_cache[key]
                    collect_training_data([frames[a.frame_index] for a in chosen], chosen, cfg.detector, data, rois)
                model = train_from_data(data, cfg.detector, seed=seed)
                m, aps = evaluate_split(model, [test[l] for l in labels], test_rois)
                cell.split_map[split] = m
                cell.class_ap.update({l: aps.get(l, 0.0) for l in labels})
            cells.append(cell)
    return EvalReport(cfg.run_id, cfg.to_json(), cells)


def merge_reports(reports: Sequence[EvalReport]) -> EvalReport:
    """Concatenate cells of several runs; later runs win on duplicate cells."""
    cells: dict[tuple[str, str], ReportCell] = {}
    for r in reports:
        for c in r.cells:
            cells[(c.scenario, c.strategy)] = c
    ids = hashlib.sha256("".join(r.run_id for r in reports).encode()).hexdigest()[:16]
    return EvalReport(ids, {"merged": [r.run_id for r in reports]}, list(cells.values()))
