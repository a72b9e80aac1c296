"""SMOTE oversampling of the minority class (training data only)."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from shapfs.tabular import DataError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SmoteConfig:
    k_neighbors: int = 5
    target_ratio: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise ValueError(f"k_neighbors must be >= 1, got {self.k_neighbors}")
        if not 0 < self.target_ratio <= 1:
            raise ValueError(f"target_ratio must be in (0, 1], got {self.target_ratio}")


@dataclass(frozen=True)
class SmoteResult:
    """Resampled data plus the provenance of every synthetic row.

    ``parents``/``neighbors`` index rows of the input ``X``; synthetic row ``s``
    equals ``X[parents[s]] + lambdas[s] * (X[neighbors[s]] - X[parents[s]])``.
    """

    X: np.ndarray
    y: np.ndarray
    parents: np.ndarray
    neighbors: np.ndarray
    lambdas: np.ndarray
    minority_label: int
    k_used: int

    @property
    def n_synthetic(self) -> int:
        return len(self.parents)


def n_synthetic(minority_count: int, majority_count: int, target_ratio: float) -> int:
    return max(0, math.ceil(target_ratio * majority_count) - minority_count)


def nearest_minority_neighbors(M: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` nearest other rows of ``M`` (Euclidean, ties by index)."""
    d2 = np.zeros((len(M), len(M)))
    for j in range(M.shape[1]):
        diff = M[:, j, None] - M[None, :, j]
        d2 += diff * diff
    np.fill_diagonal(d2, np.inf)
    return np.argsort(d2, axis=1, kind="stable")[:, :k]


def smote_sample(X: np.ndarray, y: np.ndarray, cfg: SmoteConfig) -> SmoteResult:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).astype(np.int64)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be 2-D with one label per row")
    if not np.isfinite(X).all():
        raise DataError("SMOTE input must be fully numeric and observed")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    minority = 1 if n_pos <= n_neg else 0
    minority_idx = np.flatnonzero(y == minority)
    m = len(minority_idx)
    if m < 2:
        raise DataError(f"SMOTE needs at least 2 minority samples, got {m}")
    k = min(cfg.k_neighbors, m - 1)
    if k < cfg.k_neighbors:
        logger.info("SMOTE k_neighbors clamped from %d to %d", cfg.k_neighbors, k)

    n_syn = n_synthetic(m, len(y) - m, cfg.target_ratio)
    empty = np.zeros(0, dtype=np.intp)
    if n_syn == 0:
        return SmoteResult(X.copy(), y.copy(), empty, empty, np.zeros(0), minority, k)

    M = X[minority_idx]
    nn = nearest_minority_neighbors(M, k)
    rng = np.random.default_rng(cfg.seed)
    local_parent = np.arange(n_syn) % m
    pick = rng.integers(0, k, size=n_syn)
    lambdas = rng.random(n_syn)
    local_nn = nn[local_parent, pick]
    base = M[local_parent]
    synthetic = base + lambdas[:, None] * (M[local_nn] - base)

    X_res = np.vstack([X, synthetic])
    y_res = np.concatenate([y, np.full(n_syn, minority, dtype=np.int64)])
    return SmoteResult(X_res, y_res, minority_idx[local_parent], minority_idx[local_nn],
                       lambdas, minority, k)


def smote(X: np.ndarray, y: np.ndarray, cfg: SmoteConfig) -> tuple[np.ndarray, np.ndarray]:
    """Append synthetic minority rows until minority/majority reaches ``cfg.target_ratio``."""
    res = smote_sample(X, y, cfg)
    return res.X, res.y
