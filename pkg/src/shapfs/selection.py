"""Dimensionality reduction by mean |SHAP| ranking: sweep the top-N feature
count and keep the N with the best balanced accuracy."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from shapfs.gbdt import HyperParams
from shapfs.model_selection import FoldCache, MetricsReport, cross_val_bacc, evaluate_labels
from shapfs.pipeline import PreparedSplit, fit_encoded, prepare_split, seeded, select_columns
from shapfs.resampling import SmoteConfig
from shapfs.seeding import stage_seed
from shapfs.tabular import DataTable, Encoder
from shapfs.treeshap import FeatureRanking

PAPER_PROTOCOL = "paper_protocol"
CV_PROTOCOL = "cv_protocol"


@dataclass(frozen=True)
class SweepPoint:
    n: int
    bacc: float
    report: MetricsReport


@dataclass(frozen=True)
class SweepResult:
    curve: tuple[SweepPoint, ...]
    best_n: int
    selected_features: tuple[int, ...]
    selected_names: tuple[str, ...]
    mode: str

    @property
    def best(self) -> SweepPoint:
        return next(p for p in self.curve if p.n == self.best_n)

    def point(self, n: int) -> SweepPoint:
        return next(p for p in self.curve if p.n == n)


def best_n(curve: Sequence[SweepPoint]) -> int:
    """N with maximal bacc; the smallest such N on ties."""
    top = max(p.bacc for p in curve)
    return min(p.n for p in curve if p.bacc == top)


def select_features(ranking: FeatureRanking, n: int, encoder: Encoder | None = None,
                    aggregate: bool = False) -> list[int]:
    """Sorted encoded column indices of the top-``n`` ranked features.

    With ``aggregate``, each selected one-hot indicator pulls in every
    indicator of its source column.
    """
    total = len(ranking)
    if not 2 <= n <= total:
        raise ValueError(f"N={n} outside [2, {total}]")
    chosen = set(ranking.top(n))
    if aggregate:
        if encoder is None:
            raise ValueError("aggregation needs the encoder's column groups")
        parents = {encoder.groups[i] for i in chosen}
        chosen |= {i for i, g in enumerate(encoder.groups) if g in parents}
    return sorted(chosen)


def sweep(train: DataTable, y_train, test: DataTable | None, y_test, ranking: FeatureRanking,
          hp: HyperParams, knn_k: int, smote_cfg: SmoteConfig, seed: int,
          mode: str = CV_PROTOCOL, n_folds: int = 5, n_values: Sequence[int] | None = None,
          prepared: PreparedSplit | None = None, cache: FoldCache | None = None) -> SweepResult:
    """Retrain on the top-N ranked features for every N from 2 to all.

    ``cv_protocol`` scores each N by cross-validation on the training rows only;
    ``paper_protocol`` scores on the held-out test split, which means the test
    rows influence the choice of N.
    """
    total = len(ranking)
    if total == 0:
        raise ValueError("empty ranking")
    n_values = list(range(2, total + 1)) if n_values is None else list(n_values)
    if total < 2:
        raise ValueError("need at least two ranked features to sweep")
    if not n_values or min(n_values) < 2 or max(n_values) > total:
        raise ValueError(f"N values must lie in [2, {total}]")
    curve = []
    if mode == PAPER_PROTOCOL:
        if test is None:
            raise ValueError("paper_protocol needs the test split")
        if prepared is None:
            prepared = prepare_split(train, test, knn_k)
        hp_s, sm_s = seeded(hp, smote_cfg, stage_seed(seed, "model", "final"),
                            stage_seed(seed, "smote", "final"))
        for n in n_values:
            cols = select_features(ranking, n)
            ens = fit_encoded(prepared.X_fit, np.asarray(y_train), hp_s, sm_s,
                              prepared.encoder.encoded_names, cols)
            rep = evaluate_labels(y_test, ens.predict_label(select_columns(prepared.X_eval, cols)))
            curve.append(SweepPoint(n, rep.bacc, rep))
    elif mode == CV_PROTOCOL:
        if cache is None:
            cache = FoldCache(train, y_train, n_folds, seed)
        for n in n_values:
            res = cross_val_bacc(train, y_train, hp, knn_k, smote_cfg, seed, n_folds,
                                 features=select_features(ranking, n), cache=cache)
            curve.append(SweepPoint(n, res.mean_bacc, MetricsReport.mean(res.folds)))
    else:
        raise ValueError(f"unknown sweep mode {mode!r}")
    n_best = best_n(curve)
    cols = select_features(ranking, n_best)
    return SweepResult(tuple(curve), n_best, tuple(cols), tuple(ranking.names[:n_best]), mode)


def write_curve_csv(path: str | Path, result: SweepResult, header_comment: str | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["N", "bacc", "acc", "precision", "sensitivity", "specificity", "f1"])
        for p in result.curve:
            r = p.report
            writer.writerow([p.n] + [format(v, ".17g") for v in
                                     (p.bacc, r.acc, r.precision, r.sensitivity, r.specificity, r.f1)])
