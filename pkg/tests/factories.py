"""Builders shared by the test modules."""
from __future__ import annotations

import numpy as np

from shapfs.gbdt import Ensemble, Tree
from shapfs.tabular import CATEGORICAL, CLASS_LABEL, FEATURE, NUMERIC, ColumnSchema, table_from_columns


def random_tree(rng: np.random.Generator, n_features: int, max_depth: int,
                split_prob: float = 0.8) -> Tree:
    """Random preorder tree with consistent covers (parent = left + right)."""
    feature, threshold, left, right, value, cover = [], [], [], [], [], []

    def build(depth: int) -> int:
        nd = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(0.0)
        cover.append(0.0)
        if depth < max_depth and (depth == 0 or rng.random() < split_prob):
            feature[nd] = int(rng.integers(n_features))
            threshold[nd] = float(np.round(rng.normal(), 2))
            left[nd] = build(depth + 1)
            right[nd] = build(depth + 1)
            cover[nd] = cover[left[nd]] + cover[right[nd]]
        else:
            value[nd] = float(rng.normal())
            cover[nd] = float(rng.integers(1, 50))
        return nd

    build(0)
    return Tree(np.array(feature, dtype=np.int64), np.array(threshold), np.array(left, dtype=np.int64),
                np.array(right, dtype=np.int64), np.array(value), np.array(cover))


def random_ensemble(rng: np.random.Generator, max_trees: int = 20, max_depth: int = 4,
                    max_features: int = 12) -> Ensemble:
    n_features = int(rng.integers(1, max_features + 1))
    n_trees = int(rng.integers(1, max_trees + 1))
    depth = int(rng.integers(1, max_depth + 1))
    trees = tuple(random_tree(rng, n_features, depth) for _ in range(n_trees))
    return Ensemble(float(rng.normal()), trees, tuple(f"f{j}" for j in range(n_features)))


def query_points(rng: np.random.Generator, ens: Ensemble, n: int) -> np.ndarray:
    """Gaussian points, with some coordinates snapped onto split thresholds."""
    X = np.round(rng.normal(size=(n, ens.n_features)), 2)
    thresholds = np.concatenate([t.threshold[t.feature >= 0] for t in ens.trees])
    if len(thresholds):
        snap = rng.random(X.shape) < 0.2
        X[snap] = rng.choice(thresholds, size=int(snap.sum()))
    return X


def stump(feature: int = 0, threshold: float = 0.5, lo: float = -1.0, hi: float = 1.0,
          covers=(50.0, 50.0)) -> Tree:
    return Tree(np.array([feature, -1, -1]), np.array([threshold, 0.0, 0.0]), np.array([1, -1, -1]),
                np.array([2, -1, -1]), np.array([0.0, lo, hi]),
                np.array([covers[0] + covers[1], covers[0], covers[1]]))


def small_table(numeric: dict, categorical: dict | None = None, label=None):
    """DataTable from plain lists; ``None`` marks a missing cell."""
    categorical = categorical or {}
    n = len(next(iter(numeric.values()))) if numeric else len(next(iter(categorical.values())))
    label = label if label is not None else ["A"] * n
    schema = ([ColumnSchema(k, NUMERIC, FEATURE) for k in numeric]
              + [ColumnSchema(k, CATEGORICAL, FEATURE) for k in categorical]
              + [ColumnSchema("Diagnosis", CATEGORICAL, CLASS_LABEL)])
    cols = {**numeric, **categorical, "Diagnosis": label}
    return table_from_columns(schema, cols)


def gaussian_blobs(rng: np.random.Generator, n: int, d: int, separation: float):
    """Two identity-covariance Gaussians at -/+ separation/2 along the diagonal."""
    y = np.repeat([0, 1], [n // 2, n - n // 2])
    u = np.ones(d) / np.sqrt(d)
    X = rng.normal(size=(n, d)) + np.where(y[:, None] == 1, 0.5, -0.5) * separation * u
    return X, y


def brute_force_knn(values, mask, k, center, scale):
    """All-pairs reference imputer, written cell by cell.

    Distances use the same standardized coordinates as the model; for each
    missing cell the ``k`` closest rows (ties to the lower index) that observe
    the column and share at least one observed coordinate are averaged.
    """
    n, d = values.shape
    z = [[(values[i][j] - center[j]) / scale[j] if not mask[i][j] else None for j in range(d)]
         for i in range(n)]

    def dist(a, b):
        acc, shared = 0.0, 0
        for j in range(d):
            if z[a][j] is not None and z[b][j] is not None:
                diff = z[a][j] - z[b][j]
                acc += diff * diff
                shared += 1
        return float("inf") if shared == 0 else float(np.sqrt((d / shared) * acc))

    col_means = [float(np.mean([values[i][j] for i in range(n) if not mask[i][j]])) for j in range(d)]
    out = np.array(values, dtype=float)
    for i in range(n):
        for c in range(d):
            if not mask[i][c]:
                continue
            cands = sorted(((dist(i, r), r) for r in range(n) if not mask[r][c]), key=lambda t: (t[0], t[1]))
            picked = [r for dd, r in cands[:k] if dd != float("inf")]
            if picked:
                total = 0.0
                for r in picked:
                    total += values[r][c]
                out[i, c] = total / len(picked)
            else:
                out[i, c] = col_means[c]
    return out
