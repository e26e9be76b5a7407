"""Nyström kernel ridge regression solved with a preconditioned Krylov method."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import cholesky, solve_triangular

DEFAULT_M = 500
DEFAULT_LAMBDA = 1e-6
DEFAULT_T = 20
RESIDUAL_TOL = 1e-8
JITTER = 1e-10
SIGMA_SUBSAMPLE = 200
BLOCK = 4096


@dataclass
class FalkonModel:
    centers: np.ndarray
    alpha: np.ndarray
    sigma: float
    lam: float
    residuals: list = field(default_factory=list)

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64).reshape(len(self.alpha), -1)
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        if len(self.alpha) < 1:
            raise ValueError("FALKON model needs at least one center")
        if not np.all(np.isfinite(self.alpha)):
            raise ValueError("non-finite FALKON coefficients")

    @property
    def m(self) -> int:
        return len(self.alpha)

    def decision(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        out = np.empty(len(X))
        for s in range(0, len(X), BLOCK):
            out[s : s + BLOCK] = gaussian_kernel(X[s : s + BLOCK], self.centers, self.sigma) @ self.alpha
        return out


def gaussian_kernel(A: np.ndarray, B: np.ndarray, sigma: float) -> np.ndarray:
    aa = np.einsum("ij,ij->i", A, A)
    bb = np.einsum("ij,ij->i", B, B)
    d2 = np.clip(aa[:, None] + bb[None, :] - 2.0 * A @ B.T, 0.0, None)
    return np.exp(-d2 / (2.0 * sigma * sigma))


def median_sigma(X: np.ndarray, seed: int = 0, n_sub: int = SIGMA_SUBSAMPLE) -> float:
    """Median pairwise distance on a seeded subsample."""
    X = np.asarray(X, dtype=np.float64)
    rng = np.random.default_rng(seed)
    sub = X[rng.choice(len(X), size=min(n_sub, len(X)), replace=False)]
    d2 = np.clip(((sub[:, None, :] - sub[None, :, :]) ** 2).sum(-1), 0.0, None)
    iu = np.triu_indices(len(sub), k=1)
    d = np.sqrt(d2[iu])
    d = d[d > 0]
    return float(np.median(d)) if d.size else 1.0


def _chol_upper(K: np.ndarray) -> np.ndarray:
    """Upper Cholesky factor with a trace-scaled jitter, escalated if needed."""
    eps = JITTER * max(float(np.trace(K)), 1e-300)
    eye = np.eye(len(K))
    for _ in range(12):
        try:
            return cholesky(K + eps * eye, lower=False)
        except np.linalg.LinAlgError:
            eps *= 10.0
    raise np.linalg.LinAlgError("kernel matrix could not be factorised")


def conjugate_residual(op, b: np.ndarray, t: int, tol: float = RESIDUAL_TOL) -> tuple[np.ndarray, list[float]]:
    """Krylov solve of a symmetric positive definite system.

    The conjugate residual variant minimises the residual norm over each Krylov
    space, so the recorded norms never increase.
    """
    x = np.zeros_like(b)
    r = b.copy()
    norms = [float(np.linalg.norm(r))]
    if norms[0] < tol:
        return x, norms
    p = r.copy()
    Ar = op(r)
    Ap = Ar.copy()
    rAr = float(r @ Ar)
    for _ in range(t):
        ApAp = float(Ap @ Ap)
        if ApAp <= 0.0 or rAr <= 0.0:
            break
        a = rAr / ApAp
        x += a * p
        r -= a * Ap
        norms.append(float(np.linalg.norm(r)))
        if norms[-1] < tol:
            break
        Ar = op(r)
        rAr_new = float(r @ Ar)
        beta = rAr_new / rAr
        rAr = rAr_new
        p = r + beta * p
        Ap = Ar + beta * Ap
    return x, norms


def falkon_train(
    X: np.ndarray,
    y: np.ndarray,
    M: Optional[int] = None,
    sigma: Optional[float] = None,
    lam: float = DEFAULT_LAMBDA,
    t_iters: int = DEFAULT_T,
    seed: int = 0,
) -> FalkonModel:
    """Solve ``(KnmᵀKnm + λ n Kmm) α = Knmᵀ y`` with the FALKON preconditioner."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be (n, d) with one target per row")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite training data")
    n = len(X)
    M = min(DEFAULT_M, n) if M is None else int(M)
    if not 1 <= M <= n:
        raise ValueError(f"need n >= M >= 1, got n={n}, M={M}")
    if sigma is None:
        sigma = median_sigma(X, seed)
    if sigma <= 0 or lam <= 0:
        raise ValueError("sigma and lambda must be positive")
    rng = np.random.default_rng(seed)
    C = X[np.sort(rng.choice(n, size=M, replace=False))]
    Knm = gaussian_kernel(X, C, sigma)
    T = _chol_upper(gaussian_kernel(C, C, sigma))
    A = _chol_upper(T @ T.T / M + lam * np.eye(M))

    def inv_pre(u):  # T⁻¹ A⁻¹ u
        return solve_triangular(T, solve_triangular(A, u, lower=False), lower=False)

    def inv_pre_t(u):  # A⁻ᵀ T⁻ᵀ u
        return solve_triangular(A, solve_triangular(T, u, lower=False, trans="T"), lower=False, trans="T")

    def op(u):
        v = inv_pre(u)
        return inv_pre_t(Knm.T @ (Knm @ v) / n) + lam * solve_triangular(A, solve_triangular(A, u, lower=False), lower=False, trans="T")

    b = inv_pre_t(Knm.T @ y / n)
    beta, norms = conjugate_residual(op, b, t_iters)
    alpha = inv_pre(beta)
    return FalkonModel(C, alpha, float(sigma), float(lam), norms)
