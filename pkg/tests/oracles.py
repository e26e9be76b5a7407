"""Independent reference implementations shared by the unit and acceptance suites."""
from __future__ import annotations

import numpy as np

from socialcues.core import Annotation, BoundingBox, Detection


def box(x, y, w=10, h=10):
    return BoundingBox(x, y, x + w, y + h)


def det(b, score, frame=0, label="a"):
    return Detection(b, label, score, frame)


def gt(b, frame=0, label="a"):
    return Annotation(frame, b, label)


def iou_oracle(a, b):
    ix = max(0.0, min(a.x_max, b.x_max) - max(a.x_min, b.x_min))
    iy = max(0.0, min(a.y_max, b.y_max) - max(a.y_min, b.y_min))
    inter = ix * iy
    union = (a.x_max - a.x_min) * (a.y_max - a.y_min) + (b.x_max - b.x_min) * (b.y_max - b.y_min) - inter
    return inter / union


def ap_oracle(dets, gts, thr=0.5):
    order = sorted(range(len(dets)), key=lambda i: -dets[i].score)
    taken = set()
    tp_flags = []
    for i in order:
        d = dets[i]
        best, best_j = -1.0, None
        for j, g in enumerate(gts):
            if g.frame_index != d.frame_index or j in taken:
                continue
            v = iou_oracle(d.box, g.box)
            if v > best:
                best, best_j = v, j
        if best_j is not None and best >= thr:
            taken.add(best_j)
            tp_flags.append(1)
        else:
            tp_flags.append(0)
    points = []
    tp = 0
    for k, f in enumerate(tp_flags, 1):
        tp += f
        points.append((tp / k, tp / len(gts)))
    total = 0.0
    for r in range(101):
        r = r / 100
        ps = [p for p, rec in points if rec >= r - 1e-12]
        total += max(ps) if ps else 0.0
    return total / 101


def random_fixture(rng, max_gt_per_frame=3, max_dets=11):
    n_frames = int(rng.integers(1, 4))
    gts = []
    for f in range(n_frames):
        for _ in range(int(rng.integers(0, max_gt_per_frame + 1))):
            x, y = rng.integers(0, 60, 2)
            gts.append(gt(box(float(x), float(y), float(rng.integers(8, 20)), float(rng.integers(8, 20))), f))
    if not gts:
        gts.append(gt(box(0.0, 0.0), 0))
    dets = []
    scores = rng.permutation(200)[: int(rng.integers(0, max_dets + 1))]
    for s in scores:
        if gts and rng.random() < 0.6:
            g = gts[int(rng.integers(len(gts)))]
            j = rng.integers(-4, 5, 4)
            b = BoundingBox(g.box.x_min + j[0], g.box.y_min + j[1], g.box.x_max + abs(j[2]) + 1, g.box.y_max + abs(j[3]) + 1)
            dets.append(det(b, float(s) / 10, g.frame_index))
        else:
            x, y = rng.integers(0, 70, 2)
            dets.append(det(box(float(x), float(y)), float(s) / 10, int(rng.integers(0, n_frames))))
    return dets, gts
