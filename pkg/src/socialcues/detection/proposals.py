"""Region proposals from depth discontinuities plus a coarse multi-scale grid."""
from __future__ import annotations

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from ..core import BoundingBox, RgbdFrame, iou_matrix

EDGE_STEP = 0.05
GRID_WINDOWS = (40, 80, 160)
MAX_PROPOSALS = 300
DEDUP_IOU = 0.95
MIN_REGION_PX = 12
MIN_SIDE_PX = 4
MAX_REGION_FRACTION = 0.8


def depth_regions(depth: np.ndarray, valid: np.ndarray, step: float = EDGE_STEP) -> np.ndarray:
    """Label image of regions bounded by depth discontinuities; invalid pixels get -1."""
    h, w = depth.shape
    idx = np.arange(h * w).reshape(h, w)
    d = depth.astype(np.float64)
    rows, cols = [], []
    for a_sl, b_sl in (((slice(None), slice(0, -1)), (slice(None), slice(1, None))),
                       ((slice(0, -1), slice(None)), (slice(1, None), slice(None)))):
        ok = valid[a_sl] & valid[b_sl] & (np.abs(d[a_sl] - d[b_sl]) <= step)
        rows.append(idx[a_sl][ok])
        cols.append(idx[b_sl][ok])
    r, c = np.concatenate(rows), np.concatenate(cols)
    g = coo_matrix((np.ones(len(r), dtype=np.int8), (r, c)), shape=(h * w, h * w))
    _, labels = connected_components(g, directed=False)
    labels = labels.reshape(h, w)
    return np.where(valid, labels, -1)


def region_boxes(labels: np.ndarray, min_px: int = MIN_REGION_PX, max_fraction: float = MAX_REGION_FRACTION) -> np.ndarray:
    """Tight boxes ``(x0, y0, x1, y1)`` of labelled regions, largest region first."""
    h, w = labels.shape
    flat = labels.ravel()
    keep = flat >= 0
    lab = flat[keep]
    if lab.size == 0:
        return np.zeros((0, 4))
    pix = np.flatnonzero(keep)
    ys, xs = pix // w, pix % w
    n = int(lab.max()) + 1
    counts = np.bincount(lab, minlength=n)
    x0 = np.full(n, w)
    y0 = np.full(n, h)
    x1 = np.full(n, -1)
    y1 = np.full(n, -1)
    np.minimum.at(x0, lab, xs)
    np.minimum.at(y0, lab, ys)
    np.maximum.at(x1, lab, xs)
    np.maximum.at(y1, lab, ys)
    sel = np.flatnonzero(counts >= min_px)
    boxes = np.stack([x0[sel], y0[sel], x1[sel] + 1, y1[sel] + 1], axis=1).astype(np.float64)
    bw = boxes[:, 2] - boxes[:, 0]
    bh = boxes[:, 3] - boxes[:, 1]
    ok = (bw * bh <= max_fraction * w * h) & (bw >= MIN_SIDE_PX) & (bh >= MIN_SIDE_PX)
    order = np.argsort(-counts[sel][ok], kind="stable")
    return boxes[ok][order]


def grid_boxes(width: int, height: int, windows=GRID_WINDOWS) -> np.ndarray:
    out = []
    for win in windows:
        if win > width or win > height:
            continue
        stride = win // 2
        for y in range(0, height - win + 1, stride):
            for x in range(0, width - win + 1, stride):
                out.append((x, y, x + win, y + win))
    return np.array(out, dtype=np.float64).reshape(-1, 4)


def dedupe(boxes: np.ndarray, thresh: float = DEDUP_IOU) -> np.ndarray:
    """Drop boxes overlapping an earlier kept box above ``thresh``."""
    kept: list[int] = []
    if len(boxes) == 0:
        return boxes
    ious = iou_matrix(boxes, boxes)
    alive = np.ones(len(boxes), dtype=bool)
    for i in range(len(boxes)):
        if not alive[i]:
            continue
        kept.append(i)
        alive &= ~(ious[i] > thresh)
        alive[i] = False
    return boxes[kept]


def proposal_array(frame: RgbdFrame, max_proposals: int = MAX_PROPOSALS) -> np.ndarray:
    """Proposals as an ``(n, 4)`` array: depth regions first, then the grid."""
    labels = depth_regions(frame.depth, frame.valid_mask)
    regions = region_boxes(labels)
    grid = grid_boxes(frame.width, frame.height)
    boxes = dedupe(np.vstack([regions, grid]))
    return boxes[:max_proposals]


def propose_regions(frame: RgbdFrame, max_proposals: int = MAX_PROPOSALS) -> list[BoundingBox]:
    return [BoundingBox(*map(float, b)) for b in proposal_array(frame, max_proposals)]
