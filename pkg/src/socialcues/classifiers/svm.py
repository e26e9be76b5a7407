"""Binary RBF-kernel SVM trained by sequential minimal optimisation."""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, replace
from typing import Optional, Sequence, Union

import numba
import numpy as np

KKT_TOL = 1e-3
MAX_ITER = 100_000
TAU = 1e-12


class SingleClassError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SvmModel:
    support_vectors: np.ndarray  # (n_sv, d)
    dual_coefs: np.ndarray  # alpha_i * y_i
    bias: float
    gamma: float
    C: float
    margin_scale: Optional[float] = None
    iterations: int = 0

    @property
    def dim(self) -> int:
        return self.support_vectors.shape[1]

    def check_feasibility(self, atol: float = 1e-6) -> None:
        a = np.abs(self.dual_coefs)
        if np.any(a > self.C + atol) or np.any(a < 0):
            raise AssertionError("dual coefficient outside [0, C]")
        if abs(float(self.dual_coefs.sum())) > atol:
            raise AssertionError(f"equality constraint violated: {self.dual_coefs.sum():.3g}")


def sq_dists(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    d = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return np.maximum(d, 0.0)


def rbf_kernel(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    return np.exp(-gamma * sq_dists(A, B))


def _check_xy(X, y):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be (n, d) with one label per row")
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite features")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ValueError("labels must be -1 or +1")
    if X.shape[0] < 2 or len(np.unique(y)) < 2:
        raise SingleClassError("both classes are required")
    return X, y


@numba.njit(cache=True)
def _smo_loop(K, y, C, tol, max_iter):  # pragma: no cover - compiled
    n = y.shape[0]
    alpha = np.zeros(n)
    G = -np.ones(n)
    diag = np.empty(n)
    for t in range(n):
        diag[t] = K[t, t]
    it = 0
    while it < max_iter:
        # i: maximal violator among I_up (first index on ties)
        i = -1
        m = -np.inf
        for t in range(n):
            if (y[t] > 0 and alpha[t] < C) or (y[t] < 0 and alpha[t] > 0):
                v = -y[t] * G[t]
                if v > m:
                    m = v
                    i = t
        if i < 0:
            break
        # j: largest second-order decrease among I_low
        j = -1
        low_min = np.inf
        best = np.inf
        for t in range(n):
            if (y[t] > 0 and alpha[t] > 0) or (y[t] < 0 and alpha[t] < C):
                v = -y[t] * G[t]
                if v < low_min:
                    low_min = v
                b = m - v
                if b > 0:
                    a = diag[i] + diag[t] - 2.0 * K[i, t]
                    if a <= 0:
                        a = TAU
                    obj = -(b * b) / a
                    if obj < best:
                        best = obj
                        j = t
        if m - low_min < tol or j < 0:
            break
        ai_old = alpha[i]
        aj_old = alpha[j]
        quad = diag[i] + diag[j] - 2.0 * K[i, j]
        if quad <= 0:
            quad = TAU
        if y[i] != y[j]:
            delta = (-G[i] - G[j]) / quad
            diff = ai_old - aj_old
            ai = ai_old + delta
            aj = aj_old + delta
            if diff > 0:
                if aj < 0:
                    aj = 0.0
                    ai = diff
            elif ai < 0:
                ai = 0.0
                aj = -diff
            if diff > 0:
                if ai > C:
                    ai = C
                    aj = C - diff
            elif aj > C:
                aj = C
                ai = C + diff
        else:
            delta = (G[i] - G[j]) / quad
            total = ai_old + aj_old
            ai = ai_old - delta
            aj = aj_old + delta
            if total > C:
                if ai > C:
                    ai = C
                    aj = total - C
            elif aj < 0:
                aj = 0.0
                ai = total
            if total > C:
                if aj > C:
                    aj = C
                    ai = total - C
            elif ai < 0:
                ai = 0.0
                aj = total
        alpha[i] = ai
        alpha[j] = aj
        di = y[i] * (ai - ai_old)
        dj = y[j] * (aj - aj_old)
        # Q_tk = y_t y_k K_tk
        for t in range(n):
            G[t] += y[t] * (di * K[i, t] + dj * K[j, t])
        it += 1
    return alpha, G, it


def smo(K: np.ndarray, y: np.ndarray, C: float, tol: float = KKT_TOL, max_iter: int = MAX_ITER):
    """Solve the SVM dual for a precomputed kernel; returns ``(alpha, bias, iterations)``.

    Working pairs use the second-order rule (maximal violating ``i``, then the
    ``j`` with the largest guaranteed decrease); ties go to the lowest index.
    """
    K = np.ascontiguousarray(K, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    alpha, G, it = _smo_loop(K, y, float(C), float(tol), int(max_iter))

    yG = y * G
    at_ub = alpha >= C
    at_lb = alpha <= 0
    free = ~at_ub & ~at_lb
    if free.any():
        rho = float(yG[free].mean())
    else:
        ub_mask = (at_ub & (y < 0)) | (at_lb & (y > 0))
        lb_mask = (at_ub & (y > 0)) | (at_lb & (y < 0))
        ub = yG[ub_mask].min() if ub_mask.any() else np.inf
        lb = yG[lb_mask].max() if lb_mask.any() else -np.inf
        rho = float((ub + lb) / 2) if np.isfinite(ub) and np.isfinite(lb) else float(ub if np.isfinite(ub) else lb)
    return alpha, -rho, int(it)


def svm_train(X, y, C: float = 1.0, gamma: float = 1.0, seed: int = 0, tol: float = KKT_TOL,
              max_iter: int = MAX_ITER) -> SvmModel:
    """Train a binary RBF SVM. ``seed`` is accepted for API symmetry; the solver is deterministic."""
    X, y = _check_xy(X, y)
    K = rbf_kernel(X, X, gamma)
    alpha, bias, it = smo(K, y, C, tol, max_iter)
    sv = alpha > 0
    model = SvmModel(X[sv].copy(), (alpha * y)[sv], bias, float(gamma), float(C), iterations=it)
    model.check_feasibility()
    return model


def svm_decision(m: SvmModel, x) -> Union[float, np.ndarray]:
    """Decision value for one feature vector, or a vector of values for a 2D batch."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.shape[1] != m.dim:
        raise ValueError(f"feature dimension {X.shape[1]} != model dimension {m.dim}")
    out = rbf_kernel(X, m.support_vectors, m.gamma) @ m.dual_coefs + m.bias
    return float(out[0]) if single else out


def predict(m: SvmModel, X) -> np.ndarray:
    return np.where(np.atleast_1d(svm_decision(m, X)) >= 0, 1.0, -1.0)


def calibrate(m: SvmModel, X_val) -> SvmModel:
    """Attach the margin scale used for confidences: mean |decision| on validation data."""
    d = np.abs(np.atleast_1d(svm_decision(m, X_val)))
    scale = float(d.mean()) if d.size and d.mean() > 0 else 1.0
    return replace(m, margin_scale=scale)


def confidence(m: SvmModel, decision: float) -> float:
    scale = m.margin_scale if m.margin_scale else 1.0
    return float(min(1.0, abs(decision) / scale))


# -- model selection ---------------------------------------------------------


@dataclass(frozen=True)
class FiveFoldGrid:
    folds: int = 5


@dataclass(frozen=True)
class RandomizedSearch:
    k: int = 8
    seed: int = 0
    folds: int = 5


DEFAULT_C = (0.1, 1.0, 10.0, 100.0)
DEFAULT_GAMMA_SCALES = (0.01, 0.1, 1.0)


def default_grid(d: int, gamma_scales: Sequence[float] = DEFAULT_GAMMA_SCALES) -> list[tuple[float, float]]:
    return [(c, g / d) for c in DEFAULT_C for g in gamma_scales]


def stratified_folds(y: np.ndarray, k: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    fold = np.empty(len(y), dtype=int)
    for cls in (-1.0, 1.0):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(len(idx))]
        fold[idx] = np.arange(len(idx)) % k
    return fold


def cross_val_scores(X, y, grid: Sequence[tuple[float, float]], folds: int = 5, seed: int = 0) -> dict:
    X, y = _check_xy(X, y)
    fold = stratified_folds(y, folds, seed)
    D = sq_dists(X, X)
    scores = {}
    for gamma in sorted({g for _, g in grid}):
        K = np.exp(-gamma * D)
        for C in sorted({c for c, g in grid if g == gamma}):
            accs = []
            for f in range(folds):
                tr, va = fold != f, fold == f
                if not va.any() or len(np.unique(y[tr])) < 2:
                    continue
                alpha, bias, _ = smo(K[np.ix_(tr, tr)], y[tr], C)
                dec = K[np.ix_(va, tr)] @ (alpha * y[tr]) + bias
                accs.append(float(np.mean(np.where(dec >= 0, 1.0, -1.0) == y[va])))
            scores[(C, gamma)] = float(np.mean(accs)) if accs else 0.0
    return scores


def model_select(X, y, grid: Sequence[tuple[float, float]], scheme=FiveFoldGrid(), seed: int = 0) -> tuple[float, float]:
    """Best ``(C, gamma)`` by mean stratified fold accuracy; ties favour smaller C, then smaller gamma."""
    grid = sorted({(float(c), float(g)) for c, g in grid})
    if not grid:
        raise ValueError("empty parameter grid")
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] < 10:
        raise ValueError("model selection needs at least 10 samples")
    if isinstance(scheme, RandomizedSearch):
        rng = np.random.default_rng(scheme.seed)
        k = min(scheme.k, len(grid))
        grid = [grid[i] for i in sorted(rng.choice(len(grid), size=k, replace=False))]
    if len(grid) == 1:
        return grid[0]
    scores = cross_val_scores(X, y, grid, scheme.folds, seed)
    return max(grid, key=lambda p: (scores[p], -p[0], -p[1]))


# -- serialisation -----------------------------------------------------------

MAGIC = b"SVMB"
FORMAT_VERSION = 1


def svm_to_bytes(m: SvmModel) -> bytes:
    n_sv, d = m.support_vectors.shape
    head = MAGIC + struct.pack("<HII", FORMAT_VERSION, d, n_sv)
    head += struct.pack("<dddd", m.gamma, m.C, m.bias, m.margin_scale if m.margin_scale is not None else float("nan"))
    body = m.dual_coefs.astype("<f8").tobytes() + m.support_vectors.astype("<f8").tobytes()
    return head + body


def svm_from_bytes(blob: bytes) -> SvmModel:
    if blob[:4] != MAGIC:
        raise ValueError("not an SVM model blob")
    version, d, n_sv = struct.unpack_from("<HII", blob, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported SVM blob version {version}")
    off = 4 + struct.calcsize("<HII")
    gamma, C, bias, scale = struct.unpack_from("<dddd", blob, off)
    off += 32
    coefs = np.frombuffer(blob, "<f8", n_sv, off).astype(np.float64)
    off += 8 * n_sv
    svs = np.frombuffer(blob, "<f8", n_sv * d, off).astype(np.float64).reshape(n_sv, d)
    return SvmModel(svs, coefs, bias, gamma, C, None if np.isnan(scale) else scale)


def svm_sidecar(m: SvmModel) -> str:
    return json.dumps(
        {"format_version": FORMAT_VERSION, "C": m.C, "gamma": m.gamma, "dim": m.dim,
         "n_support": int(len(m.dual_coefs)), "bias": m.bias, "margin_scale": m.margin_scale},
        indent=2, sort_keys=True,
    )


def save_svm(m: SvmModel, path) -> None:
    from pathlib import Path

    path = Path(path)
    path.write_bytes(svm_to_bytes(m))
    path.with_suffix(path.suffix + ".json").write_text(svm_sidecar(m))


def load_svm(path) -> SvmModel:
    from pathlib import Path

    return svm_from_bytes(Path(path).read_bytes())
