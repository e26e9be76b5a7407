"""Regularised least-squares box refinement with R-CNN style deltas."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_LAMBDA_RLS = 1.0


@dataclass
class RlsRefiner:
    W: np.ndarray  # (4, d)
    bias: np.ndarray  # (4,)
    lambda_rls: float

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.bias))):
            raise ValueError("non-finite RLS weights")

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.atleast_2d(X) @ self.W.T + self.bias

    def refine(self, boxes: np.ndarray, X: np.ndarray) -> np.ndarray:
        return apply_deltas(boxes, self.predict(X))

    @classmethod
    def identity(cls, d: int) -> "RlsRefiner":
        return cls(np.zeros((4, d)), np.zeros(4), DEFAULT_LAMBDA_RLS)


def box_deltas(proposals: np.ndarray, targets: np.ndarray) -> np.ndarray:
    p = np.asarray(proposals, dtype=np.float64).reshape(-1, 4)
    g = np.asarray(targets, dtype=np.float64).reshape(-1, 4)
    pw, ph = p[:, 2] - p[:, 0], p[:, 3] - p[:, 1]
    gw, gh = g[:, 2] - g[:, 0], g[:, 3] - g[:, 1]
    return np.stack(
        [
            ((g[:, 0] + g[:, 2]) - (p[:, 0] + p[:, 2])) / (2.0 * pw),
            ((g[:, 1] + g[:, 3]) - (p[:, 1] + p[:, 3])) / (2.0 * ph),
            np.log(gw / pw),
            np.log(gh / ph),
        ],
        axis=1,
    )


def apply_deltas(proposals: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    p = np.asarray(proposals, dtype=np.float64).reshape(-1, 4)
    d = np.asarray(deltas, dtype=np.float64).reshape(-1, 4)
    pw, ph = p[:, 2] - p[:, 0], p[:, 3] - p[:, 1]
    cx = 0.5 * (p[:, 0] + p[:, 2]) + d[:, 0] * pw
    cy = 0.5 * (p[:, 1] + p[:, 3]) + d[:, 1] * ph
    w = pw * np.exp(np.clip(d[:, 2], -4, 4))
    h = ph * np.exp(np.clip(d[:, 3], -4, 4))
    return np.stack([cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h], axis=1)


def rls_train(X: np.ndarray, targets: np.ndarray, lambda_rls: float = DEFAULT_LAMBDA_RLS) -> RlsRefiner:
    """Ridge regression with an unpenalised bias, solved in closed form."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    T = np.asarray(targets, dtype=np.float64).reshape(-1, 4)
    if len(X) < 1 or len(X) != len(T):
        raise ValueError("need one target row per feature row")
    if not np.all(np.isfinite(T)):
        raise ValueError("non-finite regression targets")
    mx, mt = X.mean(0), T.mean(0)
    Xc, Tc = X - mx, T - mt
    d = X.shape[1]
    W = np.linalg.solve(Xc.T @ Xc + lambda_rls * np.eye(d), Xc.T @ Tc).T
    return RlsRefiner(W, mt - W @ mx, float(lambda_rls))
