"""Minibootstrap hard-negative mining around FALKON."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .falkon import FalkonModel, falkon_train, median_sigma


class EmptyPoolError(ValueError):
    pass


@dataclass(frozen=True)
class MinibootstrapConfig:
    n_batches: int = 10
    batch_size: int = 2000
    hard_threshold: float = -0.7
    max_negatives: int = 6000

    def __post_init__(self):
        if min(self.n_batches, self.batch_size, self.max_negatives) < 1:
            raise ValueError("minibootstrap sizes must be positive")
        if not self.hard_threshold < 1.0:
            raise ValueError("hard_threshold must be below +1")


@dataclass(frozen=True)
class FalkonParams:
    M: int | None = None
    sigma: float | None = None
    lam: float = 1e-6
    t_iters: int = 20
    seed: int = 0


@dataclass
class BootstrapLog:
    """Per-round bookkeeping: negatives retained, the scores they were added with, the final set."""

    retained: list[int] = field(default_factory=list)
    added_scores: list[np.ndarray] = field(default_factory=list)
    negatives: np.ndarray | None = None


def _batches(pool: np.ndarray, cfg: MinibootstrapConfig) -> list[np.ndarray]:
    """Consecutive batches; a short pool is split evenly rather than rejected."""
    n = len(pool)
    size = min(cfg.batch_size, max(1, n // cfg.n_batches)) if n < cfg.n_batches * cfg.batch_size else cfg.batch_size
    count = min(cfg.n_batches, n // size)
    return [pool[i * size : (i + 1) * size] for i in range(count)]


def _fit(pos: np.ndarray, neg: np.ndarray, params: FalkonParams, sigma: float) -> FalkonModel:
    X = np.vstack([pos, neg])
    y = np.concatenate([np.ones(len(pos)), -np.ones(len(neg))])
    return falkon_train(X, y, M=params.M, sigma=sigma, lam=params.lam, t_iters=params.t_iters, seed=params.seed)


def minibootstrap_train(
    positives: np.ndarray,
    background_pool: np.ndarray,
    cfg: MinibootstrapConfig = MinibootstrapConfig(),
    params: FalkonParams = FalkonParams(),
    log: BootstrapLog | None = None,
) -> FalkonModel:
    """Train on positives plus negatives mined over consecutive pool batches.

    The pool is consumed in order; callers shuffle it beforehand.
    """
    pos = np.atleast_2d(np.asarray(positives, dtype=np.float64))
    pool = np.asarray(background_pool, dtype=np.float64)
    if len(pos) < 1:
        raise ValueError("need at least one positive")
    if pool.ndim != 2 or len(pool) == 0:
        raise EmptyPoolError("background pool is empty")
    batches = _batches(pool, cfg)
    sigma = params.sigma
    if sigma is None:
        sigma = median_sigma(np.vstack([pos, batches[0]]), params.seed)
    neg = batches[0][: cfg.max_negatives]
    neg_scores = np.full(len(neg), np.inf)
    if log is not None:
        log.retained.append(len(neg))
    for batch in batches[1:]:
        model = _fit(pos, neg, params, sigma)
        scores = model.decision(batch)
        hard = scores > cfg.hard_threshold
        neg_scores = model.decision(neg)
        neg = np.vstack([neg, batch[hard]])
        neg_scores = np.concatenate([neg_scores, scores[hard]])
        if len(neg) > cfg.max_negatives:
            keep = np.sort(np.argsort(-neg_scores, kind="stable")[: cfg.max_negatives])
            neg, neg_scores = neg[keep], neg_scores[keep]
        if log is not None:
            log.retained.append(len(neg))
            log.added_scores.append(scores[hard])
    if log is not None:
        log.negatives = neg
    return _fit(pos, neg, params, sigma)
