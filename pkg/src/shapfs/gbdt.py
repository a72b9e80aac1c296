"""Binary logistic gradient-boosted decision trees.

Exact greedy split search over midpoints of consecutive distinct values,
second-order (Newton) leaf weights with L1/L2 regularization, and two growth
policies: level-wise (``depth_wise``) and best-first (``leaf_wise``).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields, replace
from functools import cached_property
from typing import Sequence

import numba
import numpy as np
from scipy.special import expit

from shapfs.tabular import DataError

DEPTH_WISE = "depth_wise"
LEAF_WISE = "leaf_wise"
HESS_FLOOR = 1e-16
DUMP_FORMAT = "shapfs-gbdt"
DUMP_VERSION = 1


@dataclass(frozen=True)
class HyperParams:
    growth: str = DEPTH_WISE
    max_depth: int = 6
    num_leaves: int = 31
    n_estimators: int = 100
    learning_rate: float = 0.1
    subsample: float = 1.0
    colsample_bytree: float = 1.0
    min_child_weight: float = 1.0
    min_child_samples: int = 1
    gamma: float = 0.0
    reg_alpha: float = 0.0
    reg_lambda: float = 1.0
    scale_pos_weight: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.growth not in (DEPTH_WISE, LEAF_WISE):
            raise ValueError(f"unknown growth mode {self.growth!r}")
        if self.max_depth < 1 or self.n_estimators < 0 or self.num_leaves < 2:
            raise ValueError("max_depth >= 1, num_leaves >= 2 and n_estimators >= 0 required")
        if not (0 < self.subsample <= 1 and 0 < self.colsample_bytree <= 1):
            raise ValueError("subsample and colsample_bytree must be in (0, 1]")
        if min(self.learning_rate, self.scale_pos_weight) <= 0:
            raise ValueError("learning_rate and scale_pos_weight must be positive")
        if min(self.min_child_weight, self.min_child_samples, self.gamma,
               self.reg_alpha, self.reg_lambda) < 0:
            raise ValueError("regularization parameters must be non-negative")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "HyperParams":
        known = {f.name: f.type for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


@dataclass(frozen=True)
class Tree:
    """Array-backed binary tree in preorder; node 0 is the root.

    Leaves have ``feature == -1``. A row goes left iff ``x[feature] < threshold``.
    ``value`` holds the (learning-rate scaled) leaf weight; ``cover`` the
    weighted count of training rows routed through the node.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    cover: np.ndarray

    def __post_init__(self):
        for f in fields(self):
            getattr(self, f.name).setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def is_leaf(self) -> np.ndarray:
        return self.feature < 0

    @property
    def n_leaves(self) -> int:
        return int(self.is_leaf.sum())

    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=np.int64)
        for nd in range(self.n_nodes):
            if self.feature[nd] >= 0:
                depths[self.left[nd]] = depths[self.right[nd]] = depths[nd] + 1
        return int(depths.max())

    def predict(self, X: np.ndarray) -> np.ndarray:
        out = np.zeros(len(X))
        _predict_tree(np.ascontiguousarray(X, dtype=np.float64), self.feature, self.threshold,
                      self.left, self.right, self.value, out)
        return out

    def expected_value(self) -> float:
        """Cover-weighted mean of leaf values."""
        leaves = self.is_leaf
        return float(np.sum(self.value[leaves] * self.cover[leaves]) / self.cover[0])

    @classmethod
    def leaf(cls, value: float, cover: float = 1.0) -> "Tree":
        return cls(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]),
                   np.array([float(value)]), np.array([float(cover)]))


@dataclass(frozen=True)
class Ensemble:
    base_score: float
    trees: tuple[Tree, ...]
    encoded_names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "trees", tuple(self.trees))
        object.__setattr__(self, "encoded_names", tuple(self.encoded_names))

    @property
    def n_features(self) -> int:
        return len(self.encoded_names)

    @cached_property
    def _packed(self):
        return pack_trees(self.trees)

    def _check(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise DataError(f"expected {self.n_features} feature columns, got shape {X.shape}")
        return X

    def predict_margin(self, X) -> np.ndarray:
        X = self._check(X)
        feat, thr, left, right, value, roots = self._packed
        out = np.empty(len(X))
        _predict_packed(X, feat, thr, left, right, value, roots, float(self.base_score), out)
        return out

    def predict_proba(self, X) -> np.ndarray:
        return expit(self.predict_margin(X))

    def predict_label(self, X, threshold: float = 0.5) -> np.ndarray:
        return (self.predict_proba(X) >= threshold).astype(np.int64)

    def restrict(self, n_trees: int) -> "Ensemble":
        return Ensemble(self.base_score, self.trees[:n_trees], self.encoded_names)

    def __add__(self, other: "Ensemble") -> "Ensemble":
        if self.encoded_names != other.encoded_names:
            raise ValueError("ensembles are over different features")
        return Ensemble(self.base_score + other.base_score, self.trees + other.trees, self.encoded_names)


def pack_trees(trees: Sequence[Tree]):
    """Concatenate trees into flat arrays with absolute child indices."""
    if not trees:
        z = np.zeros(0)
        zi = np.zeros(0, dtype=np.int64)
        return zi, z, zi, zi, z, zi
    offsets = np.cumsum([0] + [t.n_nodes for t in trees[:-1]])
    feat = np.concatenate([t.feature for t in trees]).astype(np.int64)
    thr = np.concatenate([t.threshold for t in trees])
    left = np.concatenate([np.where(t.left >= 0, t.left + o, -1) for t, o in zip(trees, offsets)])
    right = np.concatenate([np.where(t.right >= 0, t.right + o, -1) for t, o in zip(trees, offsets)])
    value = np.concatenate([t.value for t in trees])
    return feat, thr, left.astype(np.int64), right.astype(np.int64), value, offsets.astype(np.int64)


@numba.njit(cache=True)
def _predict_tree(X, feat, thr, left, right, value, out):
    for i in range(X.shape[0]):
        nd = 0
        while feat[nd] >= 0:
            if X[i, feat[nd]] < thr[nd]:
                nd = left[nd]
            else:
                nd = right[nd]
        out[i] = value[nd]


@numba.njit(cache=True)
def _predict_packed(X, feat, thr, left, right, value, roots, base, out):
    for i in range(X.shape[0]):
        s = base
        for t in range(roots.shape[0]):
            nd = roots[t]
            while feat[nd] >= 0:
                if X[i, feat[nd]] < thr[nd]:
                    nd = left[nd]
                else:
                    nd = right[nd]
            s += value[nd]
        out[i] = s


# ---------------------------------------------------------------------------
# tree growth kernels


@numba.njit(cache=True)
def _split_gain(GL, HL, GR, HR, G, H, lam, gamma):
    a = GL * GL / max(HL + lam, HESS_FLOOR)
    b = GR * GR / max(HR + lam, HESS_FLOOR)
    c = G * G / max(H + lam, HESS_FLOOR)
    return 0.5 * (a + b - c) - gamma


@numba.njit(cache=True)
def _best_split(XT, g, h, sidx, feats, start, end, G, H, lam, gamma, mcw, mcs):
    best_gain = 0.0
    best_p = -1
    best_thr = 0.0
    best_nl = 0
    n = end - start
    for p in range(feats.shape[0]):
        f = feats[p]
        GL = 0.0
        HL = 0.0
        for q in range(start, end - 1):
            i = sidx[p, q]
            GL += g[i]
            HL += h[i]
            xi = XT[f, i]
            xn = XT[f, sidx[p, q + 1]]
            if not xn > xi:
                continue
            nl = q - start + 1
            nr = n - nl
            if nl < mcs or nr < mcs:
                continue
            HR = H - HL
            if HL < mcw or HR < mcw:
                continue
            gain = _split_gain(GL, HL, G - GL, HR, G, H, lam, gamma)
            if gain > best_gain:
                thr = 0.5 * (xi + xn)
                if not thr > xi:
                    thr = xn
                best_gain = gain
                best_p = p
                best_thr = thr
                best_nl = nl
    return best_gain, best_p, best_thr, best_nl


@numba.njit(cache=True)
def _partition(XT, sidx, start, end, f, thr, buf):
    for p in range(sidx.shape[0]):
        lo = start
        r = 0
        for q in range(start, end):
            i = sidx[p, q]
            if XT[f, i] < thr:
                sidx[p, lo] = i
                lo += 1
            else:
                buf[r] = i
                r += 1
        for t in range(r):
            sidx[p, lo + t] = buf[t]


@numba.njit(cache=True)
def _grow(XT, g, h, w, sidx, feats, max_depth, max_leaves, leafwise,
          lam, alpha, gamma, mcw, mcs, eta):
    n_s = sidx.shape[1]
    cap = 2 * n_s + 1
    left = np.full(cap, -1, np.int64)
    right = np.full(cap, -1, np.int64)
    feat = np.full(cap, -1, np.int64)
    thr = np.zeros(cap)
    value = np.zeros(cap)
    cover = np.zeros(cap)
    depth = np.zeros(cap, np.int64)
    start = np.zeros(cap, np.int64)
    end = np.zeros(cap, np.int64)
    Gs = np.zeros(cap)
    Hs = np.zeros(cap)
    cgain = np.zeros(cap)
    cp = np.full(cap, -1, np.int64)
    cthr = np.zeros(cap)
    cnl = np.zeros(cap, np.int64)
    buf = np.empty(n_s, np.int64)

    end[0] = n_s
    G = 0.0
    H = 0.0
    C = 0.0
    for q in range(n_s):
        i = sidx[0, q]
        G += g[i]
        H += h[i]
        C += w[i]
    Gs[0] = G
    Hs[0] = H
    cover[0] = C
    n_nodes = 1
    n_leaves = 1
    pending = np.empty(cap, np.int64)
    pending[0] = 0
    n_pending = 1
    head = 0
    scan_from = 0

    while True:
        # evaluate candidates of freshly created nodes
        while head < n_pending:
            nd = pending[head]
            head += 1
            if depth[nd] < max_depth and end[nd] - start[nd] >= 2:
                bg, bp, bt, bn = _best_split(XT, g, h, sidx, feats, start[nd], end[nd],
                                             Gs[nd], Hs[nd], lam, gamma, mcw, mcs)
                cgain[nd] = bg
                cp[nd] = bp
                cthr[nd] = bt
                cnl[nd] = bn
        if max_leaves > 0 and n_leaves >= max_leaves:
            break
        # choose the node to split
        nd = -1
        if leafwise:
            best = 0.0
            for k in range(n_nodes):
                if feat[k] < 0 and left[k] < 0 and cp[k] >= 0 and cgain[k] > best:
                    best = cgain[k]
                    nd = k
        else:
            # ids grow level by level, so the lowest splittable id is the next one in BFS order
            for k in range(scan_from, n_nodes):
                if feat[k] < 0 and cp[k] >= 0 and cgain[k] > 0.0:
                    nd = k
                    scan_from = k + 1
                    break
        if nd < 0:
            break
        f = feats[cp[nd]]
        _partition(XT, sidx, start[nd], end[nd], f, cthr[nd], buf)
        feat[nd] = f
        thr[nd] = cthr[nd]
        mid = start[nd] + cnl[nd]
        for child, s0, e0 in ((n_nodes, start[nd], mid), (n_nodes + 1, mid, end[nd])):
            start[child] = s0
            end[child] = e0
            depth[child] = depth[nd] + 1
            G = 0.0
            H = 0.0
            C = 0.0
            for q in range(s0, e0):
                i = sidx[0, q]
                G += g[i]
                H += h[i]
                C += w[i]
            Gs[child] = G
            Hs[child] = H
            cover[child] = C
            pending[n_pending] = child
            n_pending += 1
        left[nd] = n_nodes
        right[nd] = n_nodes + 1
        n_nodes += 2
        n_leaves += 1

    for k in range(n_nodes):
        if feat[k] < 0:
            G = Gs[k]
            shrunk = max(abs(G) - alpha, 0.0)
            if G > 0:
                shrunk = -shrunk
            value[k] = eta * shrunk / max(Hs[k] + lam, HESS_FLOOR)
    return (feat[:n_nodes], thr[:n_nodes], left[:n_nodes], right[:n_nodes],
            value[:n_nodes], cover[:n_nodes])


def _to_preorder(feat, thr, left, right, value, cover) -> Tree:
    order = []
    stack = [0]
    while stack:
        nd = stack.pop()
        order.append(nd)
        if feat[nd] >= 0:
            stack.append(right[nd])
            stack.append(left[nd])
    order = np.array(order, dtype=np.int64)
    new_id = np.empty(len(order), dtype=np.int64)
    new_id[order] = np.arange(len(order))
    l, r = left[order], right[order]
    return Tree(
        feat[order].copy(), np.where(feat[order] >= 0, thr[order], 0.0),
        np.where(l >= 0, new_id[np.maximum(l, 0)], -1),
        np.where(r >= 0, new_id[np.maximum(r, 0)], -1),
        np.where(feat[order] >= 0, 0.0, value[order]), cover[order].copy(),
    )


# ---------------------------------------------------------------------------
# training


def sample_weights(y: np.ndarray, scale_pos_weight: float) -> np.ndarray:
    return np.where(y == 1, float(scale_pos_weight), 1.0)


def logloss(y: np.ndarray, margin: np.ndarray, weights: np.ndarray | None = None) -> float:
    """Weighted mean binary cross-entropy, computed stably from margins."""
    per = np.logaddexp(0.0, margin) - y * margin
    if weights is None:
        return float(per.mean())
    return float(np.sum(weights * per) / np.sum(weights))


def train(X, y, hp: HyperParams, encoded_names: Sequence[str] | None = None,
          history: list | None = None) -> Ensemble:
    """Fit a boosted ensemble with logistic loss.

    If ``history`` is given, the weighted training logloss is appended before
    the first round and after every round.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y).astype(np.int64)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be 2-D with one label per row")
    n, d = X.shape
    names = tuple(encoded_names) if encoded_names is not None else tuple(f"f{j}" for j in range(d))
    if len(names) != d:
        raise ValueError("encoded_names length does not match X")
    if n < 2:
        raise DataError("need at least two training rows")
    if not np.isin(y, (0, 1)).all():
        raise DataError("labels must be 0/1")
    if y.min() == y.max():
        raise DataError("training labels contain a single class")
    if not np.isfinite(X).all():
        raise DataError("training features contain non-finite values")

    w = sample_weights(y, hp.scale_pos_weight)
    p_bar = float(np.sum(w * y) / np.sum(w))
    base = math.log(p_bar / (1.0 - p_bar))
    margin = np.full(n, base)
    if history is not None:
        history.append(logloss(y, margin, w))

    rng = np.random.default_rng(hp.seed)
    XT = np.ascontiguousarray(X.T)
    order = np.ascontiguousarray(np.argsort(XT, axis=1, kind="stable"))
    n_rows = n if hp.subsample >= 1 else max(2, int(math.floor(hp.subsample * n)))
    n_cols = d if hp.colsample_bytree >= 1 else max(1, int(math.floor(hp.colsample_bytree * d)))
    max_leaves = hp.num_leaves if hp.growth == LEAF_WISE else -1
    mcs = max(1, hp.min_child_samples)

    trees = []
    for _ in range(hp.n_estimators):
        p = expit(margin)
        g = w * (p - y)
        h = w * p * (1.0 - p)
        feats = np.arange(d) if n_cols == d else np.sort(rng.choice(d, n_cols, replace=False))
        base_order = order[feats]
        if n_rows == n:
            sidx = base_order.copy()
        else:
            in_sample = np.zeros(n, bool)
            in_sample[rng.choice(n, n_rows, replace=False)] = True
            sidx = base_order[in_sample[base_order]].reshape(len(feats), n_rows)
        arrays = _grow(XT, g, h, w, np.ascontiguousarray(sidx), feats.astype(np.int64),
                       hp.max_depth, max_leaves, hp.growth == LEAF_WISE,
                       hp.reg_lambda, hp.reg_alpha, hp.gamma, hp.min_child_weight, mcs,
                       hp.learning_rate)
        tree = _to_preorder(*arrays)
        trees.append(tree)
        margin += tree.predict(X)
        if history is not None:
            history.append(logloss(y, margin, w))
    return Ensemble(base, tuple(trees), names)


# ---------------------------------------------------------------------------
# persistence


def _num(x: float) -> str:
    return format(float(x), ".17g")


def _tree_nodes(tree: Tree) -> list[dict]:
    nodes = []
    for nd in range(tree.n_nodes):
        if tree.feature[nd] >= 0:
            nodes.append({"feature": int(tree.feature[nd]), "threshold": _num(tree.threshold[nd]),
                          "cover": _num(tree.cover[nd])})
        else:
            nodes.append({"leaf": _num(tree.value[nd]), "cover": _num(tree.cover[nd])})
    return nodes


def dumps(ens: Ensemble, stamp: dict | None = None) -> str:
    """Text dump: JSON with decimal literals at 17 significant digits; nodes in preorder."""
    doc = {
        "format": DUMP_FORMAT,
        "version": DUMP_VERSION,
        "base_score": _num(ens.base_score),
        "encoded_names": list(ens.encoded_names),
        "trees": [_tree_nodes(t) for t in ens.trees],
    }
    if stamp:
        doc["stamp"] = stamp
    return json.dumps(doc, indent=1) + "\n"


def _tree_from_nodes(nodes: list[dict]) -> Tree:
    n = len(nodes)
    feat = np.full(n, -1, np.int64)
    thr = np.zeros(n)
    left = np.full(n, -1, np.int64)
    right = np.full(n, -1, np.int64)
    value = np.zeros(n)
    cover = np.zeros(n)
    pos = 0

    def build() -> int:
        nonlocal pos
        if pos >= n:
            raise ValueError("truncated preorder node list")
        nd = pos
        pos += 1
        rec = nodes[nd]
        cover[nd] = float(rec["cover"])
        if "leaf" in rec:
            value[nd] = float(rec["leaf"])
        else:
            feat[nd] = int(rec["feature"])
            thr[nd] = float(rec["threshold"])
            left[nd] = build()
            right[nd] = build()
        return nd

    build()
    if pos != n:
        raise ValueError("trailing nodes after a complete tree")
    return Tree(feat, thr, left, right, value, cover)


def loads(text: str) -> Ensemble:
    doc = json.loads(text)
    if doc.get("format") != DUMP_FORMAT:
        raise ValueError("not a shapfs ensemble dump")
    if doc.get("version") != DUMP_VERSION:
        raise ValueError(f"unsupported dump version {doc.get('version')}")
    return Ensemble(float(doc["base_score"]), tuple(_tree_from_nodes(t) for t in doc["trees"]),
                    tuple(doc["encoded_names"]))
