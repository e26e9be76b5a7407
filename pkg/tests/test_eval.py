from __future__ import annotations

import csv
import io
import json
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from socialcues.core import Annotation, BoundingBox, Detection
from oracles import ap_oracle, random_fixture
from socialcues.eval import (
    EvalReport,
    IndexMismatchError,
    NoEvaluableClassError,
    ReportCell,
    annotation_quality,
    average_precision,
    interpolated_ap,
    mean_ap,
    merge_reports,
    per_class_ap,
)


def box(x, y, w=10, h=10):
    return BoundingBox(x, y, x + w, y + h)


def det(b, score, frame=0, label="a"):
    return Detection(b, label, score, frame)


def gt(b, frame=0, label="a"):
    return Annotation(frame, b, label)


def test_ap_matches_brute_force_oracle():
    rng = np.random.default_rng(0)
    for _ in range(300):
        dets, gts = random_fixture(rng)
        assert average_precision(dets, gts).ap == pytest.approx(ap_oracle(dets, gts), abs=1e-12)


def test_ap_invariant_under_monotone_score_maps():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        dets, gts = random_fixture(rng)
        a = average_precision(dets, gts).ap
        mapped = [det(d.box, float(np.exp(0.3 * d.score) + 7.0), d.frame_index) for d in dets]
        assert average_precision(mapped, gts).ap == a


# -- worked examples -------------------------------------------------------------------


def test_perfect_detection():
    assert average_precision([det(box(0, 0), 0.9)], [gt(box(0, 0))]).ap == pytest.approx(1.0)


def test_no_detections_gives_zero():
    c = average_precision([], [gt(box(0, 0))])
    assert c.ap == 0.0 and c.n_gt == 1


def test_half_recall():
    c = average_precision([det(box(0, 0), 0.9)], [gt(box(0, 0)), gt(box(50, 50))])
    assert c.ap == pytest.approx(51 / 101)


def test_false_positive_ranked_first():
    gts = [gt(box(0, 0))]
    c = average_precision([det(box(50, 50), 0.9), det(box(0, 0), 0.5)], gts)
    assert c.ap == pytest.approx(0.5)


def test_duplicate_detection_is_false_positive():
    c = average_precision([det(box(0, 0), 0.9), det(box(0, 0), 0.8)], [gt(box(0, 0))])
    assert list(c.precision) == [1.0, 0.5]
    assert c.ap == pytest.approx(1.0)


def test_iou_threshold_boundary():
    g = gt(BoundingBox(0, 0, 20, 10))
    # shift 6: IoU 140/260 above one half; shift 7: 130/270 below
    near = det(BoundingBox(6.0, 0, 26.0, 10), 1.0)
    assert average_precision([near], [g]).ap == pytest.approx(1.0)
    far = det(BoundingBox(7.0, 0, 27.0, 10), 1.0)
    assert average_precision([far], [g]).ap == 0.0


def test_detections_only_match_their_frame():
    assert average_precision([det(box(0, 0), 0.9, frame=1)], [gt(box(0, 0), frame=0)]).ap == 0.0


@given(st.floats(-5, 5))
def test_low_scoring_false_positive_keeps_ap(low):
    gts = [gt(box(0, 0)), gt(box(30, 30))]
    dets = [det(box(0, 0), 10.0), det(box(30, 31), 9.0)]
    base = average_precision(dets, gts).ap
    assert average_precision(dets + [det(box(80, 80), low)], gts).ap == pytest.approx(base)


@given(st.integers(0, 2**32))
def test_inserting_false_positive_never_helps(seed):
    rng = np.random.default_rng(seed)
    dets, gts = random_fixture(rng)
    fp = det(box(500.0, 500.0), float(rng.uniform(-1, 30)), 0)
    assert average_precision(dets + [fp], gts).ap <= average_precision(dets, gts).ap + 1e-12


def test_interpolated_ap_envelope():
    assert interpolated_ap(np.array([1.0, 0.5, 2 / 3]), np.array([0.5, 0.5, 1.0])) == pytest.approx(
        (51 * 1.0 + 50 * 2 / 3) / 101
    )
    assert interpolated_ap(np.zeros(0), np.zeros(0)) == 0.0


def test_single_class_required():
    with pytest.raises(ValueError):
        average_precision([det(box(0, 0), 1.0, label="a")], [gt(box(0, 0), label="b")])


def test_mean_ap_skips_classes_without_truth():
    dets = [det(box(0, 0), 1.0, label="a"), det(box(0, 0), 1.0, label="c")]
    curves = per_class_ap(dets, [gt(box(0, 0), label="a"), gt(box(40, 40), label="b")], ["a", "b", "c"])
    assert not curves["c"].evaluable and np.isnan(curves["c"].ap)
    assert mean_ap(curves) == pytest.approx(0.5)
    assert curves["c"].to_json()["ap"] is None
    with pytest.raises(NoEvaluableClassError):
        mean_ap({"c": curves["c"]})


# -- annotation quality ------------------------------------------------------------------


def truth(frames):
    return [SimpleNamespace(frame_index=i, true_object_box=b) for i, b in frames]


def test_identity_annotations_are_perfect():
    boxes = [(i, box(i, 2 * i, 20, 15)) for i in range(10)]
    q = annotation_quality([Annotation(i, b, "x") for i, b in boxes], truth(boxes))
    assert (q.mean_iou, q.ap) == pytest.approx((1.0, 1.0))


def test_offset_annotations():
    boxes = [(i, BoundingBox(0, 0, 20, 10)) for i in range(5)]
    auto = [Annotation(i, BoundingBox(10, 0, 30, 10), "x") for i in range(5)]
    q = annotation_quality(auto, truth(boxes))
    assert q.mean_iou == pytest.approx(1 / 3) and q.ap == 0.0


def test_missing_frames_lower_ap_not_iou():
    boxes = [(i, box(0, 0, 20, 20)) for i in range(4)]
    q = annotation_quality([Annotation(i, box(0, 0, 20, 20), "x") for i in range(2)], truth(boxes))
    assert q.mean_iou == pytest.approx(1.0) and q.ap == pytest.approx(51 / 101)


def test_annotation_without_truth_box_counts_zero():
    q = annotation_quality([Annotation(0, box(0, 0), "x")], truth([(0, None), (1, box(0, 0))]))
    assert q.mean_iou == 0.0 and q.n_truth == 1


def test_index_mismatch():
    with pytest.raises(IndexMismatchError):
        annotation_quality([Annotation(7, box(0, 0), "x")], truth([(0, box(0, 0))]))


# -- report ------------------------------------------------------------------------------


def sample_report(run_id="r1", strategy="hand-proximal"):
    cells = [
        ReportCell("constrained", strategy, 0.9, 0.8, {"025_mug": {"mean_iou": 0.9}}, {"small": 0.5, "big": 0.25},
                   {"025_mug": 0.5}),
        ReportCell("test", "detector", None, None, {}, {"small": 0.4}, {}),
    ]
    return EvalReport(run_id, {"seed": 0}, cells)


def test_report_json_and_csv(tmp_path):
    r = sample_report()
    back = EvalReport.from_json(json.loads(json.dumps(r.to_json())))
    assert back == r
    rows = list(csv.reader(io.StringIO(r.to_csv())))
    assert rows[0] == ["run_id", "scenario", "strategy", "metric", "key", "value"]
    assert len(rows) == 1 + 2 + 2 + 1 + 1
    assert all(len(row) == 6 for row in rows)
    j, c = r.save(tmp_path / "report")
    assert json.loads(j.read_text())["run_id"] == "r1" and c.read_text() == r.to_csv()
    lines = r.summary().splitlines()
    assert len(lines) == 4 and "small" in lines[0] and "50.0" in lines[2]


def test_merge_reports_later_wins():
    a, b = sample_report("a"), sample_report("b")
    b.cells[0].split_map["small"] = 0.75
    m = merge_reports([a, b])
    assert len(m.cells) == 2
    assert m.cell("constrained", "hand-proximal").split_map["small"] == 0.75
    with pytest.raises(KeyError):
        m.cell("from-afar", "hand-proximal")
