"""Hand-crafted RoI features computed through integral images."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from ..core import BoundingBox, RgbdFrame

BINS_PER_CHANNEL = 8
N_HIST = 3 * BINS_PER_CHANNEL
FEATURE_DIM = N_HIST + 2 + 5
MIN_ROI_AREA = 16
MAX_ASPECT = 4.0


class DegenerateBoxError(ValueError):
    pass


def _integral(a: np.ndarray) -> np.ndarray:
    """Zero-padded 2-D cumulative sum."""
    out = np.zeros((a.shape[0] + 1, a.shape[1] + 1), dtype=np.float64)
    out[1:, 1:] = a.cumsum(0).cumsum(1)
    return out


@njit(cache=True)
def _hist_integral(codes: np.ndarray, n_bins: int) -> np.ndarray:
    """Integral image of per-pixel one-hot bin codes, shape ``(h+1, w+1, n_bins)``."""
    h, w, c = codes.shape
    out = np.zeros((h + 1, w + 1, n_bins), dtype=np.int32)
    row = np.zeros(n_bins, dtype=np.int32)
    for y in range(h):
        row[:] = 0
        for x in range(w):
            for k in range(c):
                row[codes[y, x, k]] += 1
            for b in range(n_bins):
                out[y + 1, x + 1, b] = out[y, x + 1, b] + row[b]
    return out


@dataclass
class FrameIntegrals:
    hist: np.ndarray  # (h+1, w+1, 24)
    gray: np.ndarray  # (h+1, w+1)
    gray_sq: np.ndarray
    width: int
    height: int

    @classmethod
    def of(cls, frame: RgbdFrame) -> "FrameIntegrals":
        rgb = frame.rgb
        bins = (rgb // (256 // BINS_PER_CHANNEL)).astype(np.int64)
        codes = bins + np.arange(3) * BINS_PER_CHANNEL
        gray = rgb.astype(np.float64).mean(axis=2) / 255.0
        return cls(_hist_integral(codes, N_HIST), _integral(gray), _integral(gray * gray), frame.width, frame.height)

    @staticmethod
    def box_sums(table: np.ndarray, x0, y0, x1, y1) -> np.ndarray:
        return table[y1, x1] - table[y0, x1] - table[y1, x0] + table[y0, x0]


def pixel_ranges(boxes: np.ndarray, width: int, height: int) -> tuple[np.ndarray, ...]:
    """Integer pixel ranges covered by half-open float boxes, clipped to the frame."""
    b = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    x0 = np.clip(np.floor(b[:, 0]), 0, width).astype(np.intp)
    y0 = np.clip(np.floor(b[:, 1]), 0, height).astype(np.intp)
    x1 = np.clip(np.ceil(b[:, 2]), 0, width).astype(np.intp)
    y1 = np.clip(np.ceil(b[:, 3]), 0, height).astype(np.intp)
    return x0, y0, x1, y1


def extract_features(frame: RgbdFrame, boxes, integrals: FrameIntegrals | None = None) -> np.ndarray:
    """``(n, 31)`` features: colour histogram, intensity mean/std, box geometry."""
    ii = integrals if integrals is not None else FrameIntegrals.of(frame)
    b = np.asarray(boxes, dtype=np.float64).reshape(-1, 4)
    x0, y0, x1, y1 = pixel_ranges(b, ii.width, ii.height)
    area = (x1 - x0) * (y1 - y0)
    if np.any(area < MIN_ROI_AREA) or np.any((x1 <= x0) | (y1 <= y0)):
        raise DegenerateBoxError(f"RoI covers fewer than {MIN_ROI_AREA} pixels")
    n = len(b)
    out = np.empty((n, FEATURE_DIM))
    area_f = area.astype(np.float64)
    hist = ii.box_sums(ii.hist, x0, y0, x1, y1).astype(np.float64)  # (n, 24)
    out[:, :N_HIST] = hist / (3.0 * area_f[:, None])
    mean = ii.box_sums(ii.gray, x0, y0, x1, y1) / area_f
    sq = ii.box_sums(ii.gray_sq, x0, y0, x1, y1) / area_f
    out[:, N_HIST] = mean
    out[:, N_HIST + 1] = np.sqrt(np.clip(sq - mean * mean, 0.0, None))
    w = b[:, 2] - b[:, 0]
    h = b[:, 3] - b[:, 1]
    out[:, N_HIST + 2] = (b[:, 0] + 0.5 * w) / ii.width
    out[:, N_HIST + 3] = (b[:, 1] + 0.5 * h) / ii.height
    out[:, N_HIST + 4] = w / ii.width
    out[:, N_HIST + 5] = h / ii.height
    out[:, N_HIST + 6] = np.minimum(w / h, MAX_ASPECT)
    return out


def extract_feature(frame: RgbdFrame, box: BoundingBox) -> np.ndarray:
    return extract_features(frame, [box.as_tuple()])[0]
