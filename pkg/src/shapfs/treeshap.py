"""Exact Shapley attributions for tree ensembles.

``shap_values`` runs the polynomial-time path-dependent algorithm: the value
of a feature coalition is the tree output when features in the coalition
follow ``x`` and all others average over both branches in proportion to node
cover. ``shap_oracle`` evaluates the same value function over every coalition
and applies the Shapley formula directly; it exists to check the fast path.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numba
import numpy as np

from shapfs.gbdt import Ensemble, Tree
from shapfs.tabular import DataError

ORACLE_MAX_FEATURES = 20
EFFICIENCY_TOL = 1e-8


class EfficiencyError(ArithmeticError):
    """base + sum of attributions drifted from the model margin."""


@dataclass(frozen=True)
class ShapMatrix:
    base_value: float
    values: np.ndarray  # (n_samples, n_features), margin units

    def reconstruct(self) -> np.ndarray:
        """base_value + row sums; equals the model margin by efficiency."""
        return self.base_value + self.values.sum(axis=1)


@dataclass(frozen=True)
class FeatureRanking:
    names: tuple[str, ...]
    indices: tuple[int, ...]
    scores: tuple[float, ...]

    def __len__(self) -> int:
        return len(self.names)

    def top(self, n: int) -> list[int]:
        return list(self.indices[:n])

    def items(self) -> list[tuple[str, float]]:
        return list(zip(self.names, self.scores))


# ---------------------------------------------------------------------------
# polynomial-time path algorithm


@numba.njit(cache=True)
def _extend(pf, pz, po, pw, off, depth, zero, one, feature):
    pf[off + depth] = feature
    pz[off + depth] = zero
    po[off + depth] = one
    pw[off + depth] = 1.0 if depth == 0 else 0.0
    for i in range(depth - 1, -1, -1):
        pw[off + i + 1] += one * pw[off + i] * (i + 1) / (depth + 1)
        pw[off + i] = zero * pw[off + i] * (depth - i) / (depth + 1)


@numba.njit(cache=True)
def _unwind(pf, pz, po, pw, off, depth, idx):
    one = po[off + idx]
    zero = pz[off + idx]
    nxt = pw[off + depth]
    for i in range(depth - 1, -1, -1):
        if one != 0.0:
            tmp = pw[off + i]
            pw[off + i] = nxt * (depth + 1) / ((i + 1) * one)
            nxt = tmp - pw[off + i] * zero * (depth - i) / (depth + 1)
        else:
            pw[off + i] = pw[off + i] * (depth + 1) / (zero * (depth - i))
    for i in range(idx, depth):
        pf[off + i] = pf[off + i + 1]
        pz[off + i] = pz[off + i + 1]
        po[off + i] = po[off + i + 1]


@numba.njit(cache=True)
def _unwound_sum(pz, po, pw, off, depth, idx):
    one = po[off + idx]
    zero = pz[off + idx]
    nxt = pw[off + depth]
    total = 0.0
    if one != 0.0:
        for i in range(depth - 1, -1, -1):
            tmp = nxt / ((i + 1) * one)
            total += tmp
            nxt = pw[off + i] - tmp * zero * (depth - i)
    else:
        for i in range(depth - 1, -1, -1):
            total += pw[off + i] / (zero * (depth - i))
    return total * (depth + 1)


# no on-disk cache: cached self-recursive dispatchers can load stale code
@numba.njit
def _recurse(x, feat, thr, left, right, value, cover, phi, pf, pz, po, pw,
             node, depth, parent_off, zero, one, feature):
    off = parent_off + depth + 1
    for i in range(depth + 1):
        pf[off + i] = pf[parent_off + i]
        pz[off + i] = pz[parent_off + i]
        po[off + i] = po[parent_off + i]
        pw[off + i] = pw[parent_off + i]
    _extend(pf, pz, po, pw, off, depth, zero, one, feature)

    if feat[node] < 0:
        for i in range(1, depth + 1):
            w = _unwound_sum(pz, po, pw, off, depth, i)
            phi[pf[off + i]] += w * (po[off + i] - pz[off + i]) * value[node]
        return

    f = feat[node]
    if x[f] < thr[node]:
        hot = left[node]
        cold = right[node]
    else:
        hot = right[node]
        cold = left[node]
    in_zero = 1.0
    in_one = 1.0
    k = 0
    while k <= depth:
        if pf[off + k] == f:
            break
        k += 1
    if k <= depth:
        in_zero = pz[off + k]
        in_one = po[off + k]
        _unwind(pf, pz, po, pw, off, depth, k)
        depth -= 1
    _recurse(x, feat, thr, left, right, value, cover, phi, pf, pz, po, pw,
             hot, depth + 1, off, cover[hot] / cover[node] * in_zero, in_one, f)
    _recurse(x, feat, thr, left, right, value, cover, phi, pf, pz, po, pw,
             cold, depth + 1, off, cover[cold] / cover[node] * in_zero, 0.0, f)


@numba.njit
def _shap_batch(X, feat, thr, left, right, value, cover, roots, max_depth, out):
    size = (max_depth + 2) * (max_depth + 3) // 2 + max_depth + 2
    pf = np.empty(size, np.int64)
    pz = np.empty(size)
    po = np.empty(size)
    pw = np.empty(size)
    for r in range(X.shape[0]):
        for t in range(roots.shape[0]):
            root = roots[t]
            if feat[root] < 0:
                continue
            pf[0] = -1
            pz[0] = 1.0
            po[0] = 1.0
            pw[0] = 1.0
            # slot 0 is a scratch parent for the root call
            _recurse(X[r], feat, thr, left, right, value, cover, out[r], pf, pz, po, pw,
                     root, 0, 0, 1.0, 1.0, -1)


def _check_covers(ens: Ensemble) -> None:
    for t, tree in enumerate(ens.trees):
        if not np.all(tree.cover > 0):
            raise DataError(f"tree {t} has a node with non-positive cover")


def expected_margin(ens: Ensemble) -> float:
    return float(ens.base_score + sum(t.expected_value() for t in ens.trees))


def shap_values(ens: Ensemble, X) -> ShapMatrix:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != ens.n_features:
        raise DataError(f"expected {ens.n_features} feature columns, got shape {X.shape}")
    _check_covers(ens)
    out = np.zeros((len(X), ens.n_features))
    if ens.trees:
        feat, thr, left, right, value, roots = ens._packed
        cover = np.concatenate([t.cover for t in ens.trees])
        max_depth = max(t.depth() for t in ens.trees)
        _shap_batch(X, feat, thr, left, right, value, cover, roots, max_depth, out)
    shap = ShapMatrix(expected_margin(ens), out)
    if len(X):
        err = float(np.max(np.abs(shap.reconstruct() - ens.predict_margin(X))))
        if err > EFFICIENCY_TOL:
            raise EfficiencyError(f"efficiency violated by {err:.3g} (tolerance {EFFICIENCY_TOL})")
    return shap


# ---------------------------------------------------------------------------
# exhaustive oracle


def _coalition_values(tree: Tree, x: np.ndarray, used: list[int]) -> np.ndarray:
    """Tree value for each coalition of ``used`` features (bit k <-> used[k])."""
    n_sub = 1 << len(used)
    member = {f: ((np.arange(n_sub) >> k) & 1).astype(bool) for k, f in enumerate(used)}

    def value_at(nd: int) -> np.ndarray:
        if tree.feature[nd] < 0:
            return np.full(n_sub, tree.value[nd])
        l, r = tree.left[nd], tree.right[nd]
        vl, vr = value_at(l), value_at(r)
        followed = vl if x[tree.feature[nd]] < tree.threshold[nd] else vr
        averaged = (tree.cover[l] * vl + tree.cover[r] * vr) / tree.cover[nd]
        return np.where(member[tree.feature[nd]], followed, averaged)

    return value_at(0)


def coalition_values(ens: Ensemble, x: np.ndarray) -> np.ndarray:
    """v(S) for every subset S of all features, indexed by bitmask."""
    n_feat = ens.n_features
    masks = np.arange(1 << n_feat)
    total = np.full(len(masks), float(ens.base_score))
    for tree in ens.trees:
        used = sorted(set(int(f) for f in tree.feature if f >= 0))
        local = np.zeros(len(masks), dtype=np.int64)
        for k, f in enumerate(used):
            local |= ((masks >> f) & 1) << k
        total += _coalition_values(tree, x, used)[local]
    return total


def shap_oracle(ens: Ensemble, x) -> np.ndarray:
    """Shapley values by enumerating all 2^F coalitions (F <= 20)."""
    x = np.asarray(x, dtype=float)
    n_feat = ens.n_features
    if n_feat > ORACLE_MAX_FEATURES:
        raise ValueError(f"oracle limited to {ORACLE_MAX_FEATURES} features, model has {n_feat}")
    if x.shape != (n_feat,):
        raise DataError(f"expected a vector of {n_feat} features, got shape {x.shape}")
    _check_covers(ens)
    v = coalition_values(ens, x)
    masks = np.arange(1 << n_feat)
    sizes = np.array([bin(m).count("1") for m in masks])
    fact = [math.factorial(k) for k in range(n_feat + 1)]
    weight = np.array([fact[s] * fact[n_feat - s - 1] / fact[n_feat] if s < n_feat else 0.0
                       for s in sizes])
    phi = np.zeros(n_feat)
    for j in range(n_feat):
        without = masks[((masks >> j) & 1) == 0]
        phi[j] = np.sum(weight[without] * (v[without | (1 << j)] - v[without]))
    return phi


# ---------------------------------------------------------------------------
# ranking and export


def rank_features(shap: ShapMatrix, names: Sequence[str]) -> FeatureRanking:
    values = np.asarray(shap.values)
    if values.ndim != 2 or values.size == 0:
        raise ValueError("empty SHAP matrix")
    if values.shape[1] != len(names):
        raise ValueError("names do not match SHAP columns")
    scores = np.abs(values).mean(axis=0)
    order = np.argsort(-scores, kind="stable")
    return FeatureRanking(tuple(names[i] for i in order), tuple(int(i) for i in order),
                          tuple(float(scores[i]) for i in order))


def write_shap_csv(path: str | Path, shap: ShapMatrix, names: Sequence[str],
                   header_comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(names) + ["base_value"])
        base = format(shap.base_value, ".17g")
        for row in shap.values:
            writer.writerow([format(v, ".17g") for v in row] + [base])


def read_shap_csv(path: str | Path) -> tuple[ShapMatrix, list[str]]:
    with open(path, newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    names = rows[0][:-1]
    data = np.array([[float(v) for v in r] for r in rows[1:]])
    return ShapMatrix(float(data[0, -1]) if len(data) else 0.0, data[:, :-1]), names


def write_ranking_csv(path: str | Path, ranking: FeatureRanking, header_comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["rank", "feature", "index", "mean_abs_shap"])
        for r, (name, idx, score) in enumerate(zip(ranking.names, ranking.indices, ranking.scores), 1):
            writer.writerow([r, name, idx, format(score, ".17g")])


def read_ranking_csv(path: str | Path) -> FeatureRanking:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(ln for ln in fh if not ln.startswith("#")))
    return FeatureRanking(tuple(r["feature"] for r in rows), tuple(int(r["index"]) for r in rows),
                          tuple(float(r["mean_abs_shap"]) for r in rows))
