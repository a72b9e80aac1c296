"""Fit-on-train preprocessing + SMOTE + boosting, composed in the one order
that keeps evaluation rows out of every fit step."""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from shapfs.gbdt import Ensemble, HyperParams, train
from shapfs.imputation import TableImputer, fit_table_imputer
from shapfs.resampling import SmoteConfig, smote_sample
from shapfs.tabular import DataTable, Encoder, apply_encoder, fit_encoder


@dataclass(frozen=True)
class PreparedSplit:
    """Imputed + encoded matrices for one (fit rows, evaluation rows) pair."""

    imputer: TableImputer
    encoder: Encoder
    X_fit: np.ndarray
    X_eval: np.ndarray


def prepare_split(fit_table: DataTable, eval_table: DataTable, knn_k: int) -> PreparedSplit:
    imputer = fit_table_imputer(fit_table, knn_k)
    fit_imp = imputer.transform(fit_table)
    encoder = fit_encoder(fit_imp)
    X_fit = apply_encoder(encoder, fit_imp)
    X_eval = apply_encoder(encoder, imputer.transform(eval_table))
    return PreparedSplit(imputer, encoder, X_fit, X_eval)


def fit_encoded(X: np.ndarray, y: np.ndarray, hp: HyperParams, smote_cfg: SmoteConfig,
                names: Sequence[str], features: Sequence[int] | None = None) -> Ensemble:
    """SMOTE the (already encoded) fit rows, then boost on the selected columns."""
    if features is not None:
        features = np.asarray(features, dtype=np.intp)
        X = X[:, features]
        names = [names[i] for i in features]
    res = smote_sample(X, y, smote_cfg)
    return train(res.X, res.y, hp, names)


def select_columns(X: np.ndarray, features: Sequence[int] | None) -> np.ndarray:
    return X if features is None else X[:, np.asarray(features, dtype=np.intp)]


def seeded(hp: HyperParams, smote_cfg: SmoteConfig, model_seed: int, smote_seed: int):
    return replace(hp, seed=model_seed), replace(smote_cfg, seed=smote_seed)
