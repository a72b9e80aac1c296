"""Classification metrics, stratified k-fold cross-validation and
random hyperparameter search that maximizes mean balanced accuracy."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from shapfs.gbdt import DEPTH_WISE, LEAF_WISE, HyperParams
from shapfs.pipeline import PreparedSplit, fit_encoded, prepare_split, seeded, select_columns
from shapfs.resampling import SmoteConfig
from shapfs.seeding import stage_seed, substream
from shapfs.tabular import CATEGORICAL, DataError, DataTable

METRIC_NAMES = ("acc", "bacc", "precision", "sensitivity", "specificity", "f1")


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError(f"negative count in {self}")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)

    @classmethod
    def from_labels(cls, y_true, y_pred) -> "ConfusionMatrix":
        y_true = np.asarray(y_true).astype(bool)
        y_pred = np.asarray(y_pred).astype(bool)
        return cls(int(np.sum(y_true & y_pred)), int(np.sum(~y_true & y_pred)),
                   int(np.sum(~y_true & ~y_pred)), int(np.sum(y_true & ~y_pred)))


@dataclass(frozen=True)
class MetricsReport:
    acc: float
    bacc: float
    precision: float
    sensitivity: float
    specificity: float
    f1: float
    undefined: tuple[str, ...] = ()  # metrics whose denominator was 0 (reported as 0)

    def to_dict(self) -> dict:
        d = {name: getattr(self, name) for name in METRIC_NAMES}
        d["undefined"] = list(self.undefined)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(*(float(d[n]) for n in METRIC_NAMES), tuple(d.get("undefined", ())))

    @classmethod
    def mean(cls, reports: Sequence["MetricsReport"]) -> "MetricsReport":
        """Per-metric average (bacc stays the mean of its halves; f1 is averaged, not recomputed)."""
        undefined = sorted({u for r in reports for u in r.undefined})
        return cls(*(float(np.mean([getattr(r, n) for r in reports])) for n in METRIC_NAMES),
                   tuple(undefined))


def _ratio(num: int, den: int, name: str, undefined: list[str]) -> float:
    if den == 0:
        undefined.append(name)
        return 0.0
    return num / den


def compute_metrics(cm: ConfusionMatrix) -> MetricsReport:
    if cm.total <= 0:
        raise ValueError("confusion matrix is empty")
    undefined: list[str] = []
    acc = (cm.tp + cm.tn) / cm.total
    sens = _ratio(cm.tp, cm.tp + cm.fn, "sensitivity", undefined)
    spec = _ratio(cm.tn, cm.tn + cm.fp, "specificity", undefined)
    prec = _ratio(cm.tp, cm.tp + cm.fp, "precision", undefined)
    bacc = (sens + spec) / 2
    if prec + sens == 0:
        undefined.append("f1")
        f1 = 0.0
    else:
        f1 = 2 * prec * sens / (prec + sens)
    return MetricsReport(acc, bacc, prec, sens, spec, f1, tuple(undefined))


def evaluate_labels(y_true, y_pred) -> MetricsReport:
    return compute_metrics(ConfusionMatrix.from_labels(y_true, y_pred))


# ---------------------------------------------------------------------------
# cross-validation


def fold_class_sizes(count: int, k: int, offset: int = 0) -> list[int]:
    """Split ``count`` into ``k`` near-equal parts; extras start at fold ``offset``."""
    base, extra = divmod(count, k)
    sizes = [base] * k
    for i in range(extra):
        sizes[(offset + i) % k] += 1
    return sizes


def stratified_kfold(labels, k: int = 5, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Stratified folds; each class's surplus rows continue where the previous class's stopped,
    so whole folds also stay near-equal in size."""
    labels = np.asarray(labels)
    if k < 2:
        raise ValueError("k must be >= 2")
    rng = substream(seed, "kfold")
    fold_of = np.empty(len(labels), dtype=np.int64)
    offset = 0
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        if len(members) < k:
            raise DataError(f"class {cls!r} has {len(members)} rows, fewer than k={k} folds")
        members = members[rng.permutation(len(members))]
        sizes = fold_class_sizes(len(members), k, offset)
        offset = (offset + len(members) % k) % k
        pos = 0
        for f, size in enumerate(sizes):
            fold_of[members[pos:pos + size]] = f
            pos += size
    all_idx = np.arange(len(labels))
    return [(all_idx[fold_of != f], all_idx[fold_of == f]) for f in range(k)]


def canonical_order(table: DataTable, labels: np.ndarray) -> np.ndarray:
    """Row permutation that depends only on row contents (so input order is irrelevant)."""
    cols = table.schema

    def key(i: int):
        parts = [int(labels[i])]
        for c in cols:
            if table.missing[c.name][i]:
                parts.append((1, ""))
            elif c.kind == CATEGORICAL:
                parts.append((0, str(table.data[c.name][i])))
            else:
                parts.append((0, float(table.data[c.name][i])))
        return parts

    return np.array(sorted(range(table.n_rows), key=key), dtype=np.intp)


@dataclass(frozen=True)
class CVResult:
    mean_bacc: float
    folds: tuple[MetricsReport, ...]


class FoldCache:
    """Memo of imputed/encoded folds keyed by ``knn_k``.

    Preparation depends only on (data, folds, knn_k), never on model
    parameters, so caching it leaves every trial's result unchanged.
    """

    def __init__(self, table: DataTable, labels: np.ndarray, n_folds: int, seed: int):
        order = canonical_order(table, labels)
        self.table = table.take(order)
        self.labels = np.asarray(labels)[order]
        self.n_folds = n_folds
        self.seed = seed
        self.folds = stratified_kfold(self.labels, n_folds, stage_seed(seed, "cv"))
        self._prepared: dict[int, list[PreparedSplit]] = {}

    def prepared(self, knn_k: int) -> list[PreparedSplit]:
        if knn_k not in self._prepared:
            self._prepared[knn_k] = [
                prepare_split(self.table.take(tr), self.table.take(va), knn_k)
                for tr, va in self.folds
            ]
        return self._prepared[knn_k]


def cross_val_bacc(data: DataTable, labels, hp: HyperParams, knn_k: int, smote_cfg: SmoteConfig,
                   seed: int, n_folds: int = 5, features: Sequence[int] | None = None,
                   cache: FoldCache | None = None) -> CVResult:
    """Mean validation BACC over stratified folds.

    Per fold: imputers and encoder fit on fold-train rows only, both splits
    transformed, SMOTE applied to fold-train only, model trained, then scored on
    the untouched validation rows.
    """
    if cache is None:
        cache = FoldCache(data, labels, n_folds, seed)
    reports = []
    for f, ((tr, va), prep) in enumerate(zip(cache.folds, cache.prepared(knn_k))):
        y_tr, y_va = cache.labels[tr], cache.labels[va]
        if y_tr.min() == y_tr.max() or y_va.min() == y_va.max():
            raise DataError(f"fold {f} lacks one of the classes")
        hp_f, sm_f = seeded(hp, smote_cfg, stage_seed(cache.seed, "model", f),
                            stage_seed(cache.seed, "smote", f))
        ens = fit_encoded(prep.X_fit, y_tr, hp_f, sm_f, prep.encoder.encoded_names, features)
        pred = ens.predict_label(select_columns(prep.X_eval, features))
        reports.append(evaluate_labels(y_va, pred))
    return CVResult(float(np.mean([r.bacc for r in reports])), tuple(reports))


# ---------------------------------------------------------------------------
# search space and random search


@dataclass(frozen=True)
class Dim:
    """One searchable parameter: ``int``, ``real``, ``log`` (log-uniform real) or ``choice``."""

    name: str
    kind: str
    low: float = 0.0
    high: float = 0.0
    choices: tuple = ()
    when: tuple[str, Any] | None = None

    def __post_init__(self):
        if self.kind not in ("int", "real", "log", "choice"):
            raise ValueError(f"{self.name}: unknown dimension kind {self.kind!r}")
        if self.kind == "choice" and not self.choices:
            raise ValueError(f"{self.name}: empty choice list")
        if self.kind != "choice" and self.low > self.high:
            raise ValueError(f"{self.name}: low > high")
        if self.kind == "log" and self.low <= 0:
            raise ValueError(f"{self.name}: log range must be positive")

    def sample(self, rng: np.random.Generator):
        if self.kind == "choice":
            return self.choices[int(rng.integers(len(self.choices)))]
        if self.kind == "int":
            return int(rng.integers(int(self.low), int(self.high) + 1))
        if self.kind == "log":
            return float(math.exp(rng.uniform(math.log(self.low), math.log(self.high))))
        return float(rng.uniform(self.low, self.high))

    def contains(self, value) -> bool:
        if self.kind == "choice":
            return value in self.choices
        return self.low <= value <= self.high


@dataclass(frozen=True)
class SearchSpace:
    dims: tuple[Dim, ...]
    fixed: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(self.dims))

    def sample(self, rng: np.random.Generator) -> dict:
        params = dict(self.fixed)
        for dim in self.dims:
            if dim.when is not None and params.get(dim.when[0]) != dim.when[1]:
                continue
            params[dim.name] = dim.sample(rng)
        return params


def _xgb_dims(when=None) -> list[Dim]:
    return [
        Dim("max_depth", "int", 3, 15, when=when),
        Dim("n_estimators", "int", 50, 250, when=when),
        Dim("learning_rate", "log", 0.01, 0.2, when=when),
        Dim("subsample", "real", 0.5, 1.0, when=when),
        Dim("colsample_bytree", "real", 0.6, 1.0, when=when),
        Dim("min_child_weight", "real", 1.0, 10.0, when=when),
        Dim("gamma", "real", 0.0, 1.0, when=when),
        Dim("reg_alpha", "log", 0.01, 2.0, when=when),
        Dim("reg_lambda", "log", 0.01, 5.0, when=when),
        Dim("scale_pos_weight", "real", 0.5, 5.0, when=when),
    ]


def _lgbm_dims(when=None) -> list[Dim]:
    return [
        Dim("max_depth", "int", 3, 15, when=when),
        Dim("num_leaves", "int", 20, 50, when=when),
        Dim("n_estimators", "int", 50, 200, when=when),
        Dim("learning_rate", "log", 0.01, 0.2, when=when),
        Dim("subsample", "real", 0.5, 1.0, when=when),
        Dim("colsample_bytree", "real", 0.6, 1.0, when=when),
        Dim("min_child_samples", "int", 5, 100, when=when),
        # lambda_l1 / lambda_l2 start at 0 in the LightGBM block; the log scale needs a positive floor
        Dim("reg_alpha", "log", 0.01, 2.0, when=when),
        Dim("reg_lambda", "log", 0.01, 5.0, when=when),
        Dim("gamma", "real", 0.0, 1.0, when=when),
    ]


def _catboost_dims() -> list[Dim]:
    return [
        Dim("max_depth", "int", 3, 15),
        Dim("learning_rate", "log", 0.01, 0.2),
        Dim("n_estimators", "int", 50, 200),
        Dim("reg_lambda", "real", 1.0, 10.0),
    ]


KNN_DIM = Dim("knn_k", "int", 3, 30)


def default_search_space(family: str = "union") -> SearchSpace:
    """Table-style search ranges for one boosting family, or the union of the xgboost-
    and lightgbm-style families with the growth policy as a searched choice."""
    if family == "xgboost":
        return SearchSpace(tuple(_xgb_dims() + [KNN_DIM]), {"growth": DEPTH_WISE})
    if family == "lightgbm":
        return SearchSpace(tuple(_lgbm_dims() + [KNN_DIM]),
                           {"growth": LEAF_WISE, "min_child_weight": 1e-3})
    if family == "catboost":
        return SearchSpace(tuple(_catboost_dims() + [KNN_DIM]), {"growth": DEPTH_WISE})
    if family == "union":
        dims = ([Dim("growth", "choice", choices=(DEPTH_WISE, LEAF_WISE))]
                + _xgb_dims(("growth", DEPTH_WISE)) + _lgbm_dims(("growth", LEAF_WISE))
                + [Dim("min_child_weight", "choice", choices=(1e-3,), when=("growth", LEAF_WISE)),
                   KNN_DIM])
        return SearchSpace(tuple(dims))
    raise ValueError(f"unknown search family {family!r}")


def split_params(params: dict) -> tuple[HyperParams, int]:
    """Separate the imputer's ``knn_k`` from model hyperparameters."""
    params = dict(params)
    knn_k = int(params.pop("knn_k", 5))
    return HyperParams.from_dict(params), knn_k


@dataclass(frozen=True)
class TrialRecord:
    number: int
    params: dict
    folds: tuple[MetricsReport, ...]
    mean_bacc: float

    @property
    def hyperparams(self) -> HyperParams:
        return split_params(self.params)[0]

    @property
    def knn_k(self) -> int:
        return split_params(self.params)[1]

    def to_dict(self) -> dict:
        return {"trial": self.number, "params": self.params, "mean_bacc": self.mean_bacc,
                "folds": [r.to_dict() for r in self.folds]}

    @classmethod
    def from_dict(cls, d: dict) -> "TrialRecord":
        return cls(int(d["trial"]), dict(d["params"]),
                   tuple(MetricsReport.from_dict(r) for r in d["folds"]), float(d["mean_bacc"]))


Objective = Callable[[HyperParams, int], CVResult]


def search(space: SearchSpace, budget: int, objective: Objective, seed: int,
           history: list | None = None,
           on_trial: Callable[[TrialRecord], None] | None = None) -> TrialRecord:
    """Uniform / log-uniform random search; the best mean BACC wins, ties to the earlier trial."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if not space.dims and not space.fixed:
        raise ValueError("empty search space")
    rng = substream(seed, "search")
    best = None
    for t in range(budget):
        params = space.sample(rng)
        hp, knn_k = split_params(params)
        result = objective(hp, knn_k)
        rec = TrialRecord(t, params, result.folds, result.mean_bacc)
        if history is not None:
            history.append(rec)
        if on_trial is not None:
            on_trial(rec)
        if best is None or rec.mean_bacc > best.mean_bacc:
            best = rec
    return best


def cv_objective(table: DataTable, labels, smote_cfg: SmoteConfig, seed: int,
                 n_folds: int = 5) -> Objective:
    cache = FoldCache(table, labels, n_folds, seed)

    def objective(hp: HyperParams, knn_k: int) -> CVResult:
        return cross_val_bacc(table, labels, hp, knn_k, smote_cfg, seed, n_folds, cache=cache)

    objective.cache = cache
    return objective


def trials_to_jsonl(trials: Iterable[TrialRecord]) -> str:
    return "".join(json.dumps(t.to_dict(), sort_keys=True) + "\n" for t in trials)


def trials_from_jsonl(text: str) -> list[TrialRecord]:
    return [TrialRecord.from_dict(json.loads(line)) for line in text.splitlines()
            if line.strip() and not line.startswith("#")]
