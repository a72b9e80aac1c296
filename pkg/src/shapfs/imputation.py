"""Nearest-neighbour imputation for numeric columns and mode imputation for
categorical columns. Both are fitted on a training partition only."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from shapfs.tabular import CATEGORICAL, NUMERIC, STD_EPS, DataError, DataTable


@dataclass(frozen=True)
class KnnImputerModel:
    """Reference rows and fallback statistics for KNN imputation.

    Distances are measured on copies standardized with ``center``/``scale``
    (observed-value mean and population std of each reference column), while
    the imputed values themselves are means of raw reference values.
    """

    k: int
    reference_values: np.ndarray
    reference_mask: np.ndarray  # True where missing
    column_means: np.ndarray
    center: np.ndarray
    scale: np.ndarray
    names: tuple[str, ...] = ()

    @property
    def n_columns(self) -> int:
        return self.reference_values.shape[1]


def knn_fit(values: np.ndarray, mask: np.ndarray, k: int, names: Sequence[str] | None = None) -> KnnImputerModel:
    values = np.array(values, dtype=float)
    mask = np.array(mask, dtype=bool)
    if values.shape != mask.shape or values.ndim != 2:
        raise ValueError("values and mask must be 2-D arrays of the same shape")
    n, d = values.shape
    names = tuple(names) if names is not None else tuple(f"x{j}" for j in range(d))
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if k > n:
        raise DataError(f"k={k} exceeds the {n} reference rows")
    observed = ~mask
    counts = observed.sum(axis=0)
    for j in range(d):
        if counts[j] == 0:
            raise DataError(f"column {names[j]!r} has no observed training values")
    means = np.array([values[observed[:, j], j].mean() for j in range(d)])
    stds = np.array([values[observed[:, j], j].std() for j in range(d)])
    values = np.where(mask, np.nan, values)
    values.setflags(write=False)
    mask.setflags(write=False)
    return KnnImputerModel(int(k), values, mask, means, means.copy(), np.maximum(stds, STD_EPS), names)


def masked_distances(model: KnnImputerModel, values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Masked Euclidean distances from each query row to each reference row.

    ``d(a, b) = sqrt(D / |S| * sum_{j in S} (a_j - b_j)^2)`` over the
    coordinates ``S`` observed in both rows; an empty ``S`` gives ``inf``.
    """
    d = model.n_columns
    zq = (np.where(mask, 0.0, values) - model.center) / model.scale
    zr = (np.where(model.reference_mask, 0.0, model.reference_values) - model.center) / model.scale
    oq, orf = ~mask, ~model.reference_mask
    ssum = np.zeros((len(values), len(zr)))
    cnt = np.zeros((len(values), len(zr)))
    # column-sequential accumulation keeps the summation order fixed
    for j in range(d):
        both = oq[:, j, None] & orf[None, :, j]
        diff = zq[:, j, None] - zr[None, :, j]
        ssum += np.where(both, diff * diff, 0.0)
        cnt += both
    with np.errstate(divide="ignore", invalid="ignore"):
        dist = np.sqrt((d / cnt) * ssum)
    dist[cnt == 0] = np.inf
    return dist


def knn_transform(model: KnnImputerModel, values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if values.ndim != 2 or values.shape[1] != model.n_columns:
        raise ValueError(f"expected {model.n_columns} columns, got shape {values.shape}")
    out = values.copy()
    rows = np.flatnonzero(mask.any(axis=1))
    if len(rows) == 0:
        return out
    dist = masked_distances(model, values[rows], mask[rows])
    ref_obs = ~model.reference_mask
    for c in range(model.n_columns):
        local = np.flatnonzero(mask[rows, c])
        if len(local) == 0:
            continue
        donors = np.flatnonzero(ref_obs[:, c])
        dc = dist[np.ix_(local, donors)]
        order = np.argsort(dc, axis=1, kind="stable")[:, : model.k]
        ranked = np.take_along_axis(dc, order, axis=1)
        donor_vals = model.reference_values[donors[order], c]
        usable = np.isfinite(ranked)
        total = np.zeros(len(local))
        count = np.zeros(len(local))
        for r in range(order.shape[1]):
            total += np.where(usable[:, r], donor_vals[:, r], 0.0)
            count += usable[:, r]
        with np.errstate(divide="ignore", invalid="ignore"):
            filled = np.where(count > 0, total / count, model.column_means[c])
        out[rows[local], c] = filled
    return out


@dataclass(frozen=True)
class ModeImputerModel:
    modes: dict[str, tuple[str, int]]


def mode_fit(table: DataTable, columns: Sequence[str] | None = None) -> ModeImputerModel:
    if columns is None:
        columns = [c.name for c in table.feature_columns if c.kind == CATEGORICAL]
    modes = {}
    for name in columns:
        obs = table.data[name][~table.missing[name]]
        if len(obs) == 0:
            raise DataError(f"categorical column {name!r} is entirely missing in training data")
        levels, counts = np.unique(obs.astype(str), return_counts=True)
        best = int(np.argmax(counts))  # np.unique sorts, so ties go to the lexicographic first
        modes[name] = (str(levels[best]), int(counts[best]))
    return ModeImputerModel(modes)


def mode_transform(model: ModeImputerModel, table: DataTable) -> DataTable:
    for name, (mode, _) in model.modes.items():
        miss = table.missing[name]
        if miss.any():
            vals = table.data[name].copy()
            vals[miss] = mode
            table = table.replace(name, vals)
    return table


@dataclass(frozen=True)
class TableImputer:
    """KNN for numeric feature columns, mode for categorical ones."""

    knn: KnnImputerModel | None
    mode: ModeImputerModel

    def transform(self, table: DataTable) -> DataTable:
        table = mode_transform(self.mode, table)
        if self.knn is None:
            return table
        values, mask = table.numeric_matrix(self.knn.names)
        if not mask.any():
            return table
        filled = knn_transform(self.knn, values, mask)
        for j, name in enumerate(self.knn.names):
            if mask[:, j].any():
                table = table.replace(name, filled[:, j])
        return table


def fit_table_imputer(train: DataTable, k: int) -> TableImputer:
    numeric = [c.name for c in train.feature_columns if c.kind == NUMERIC]
    knn = None
    if numeric:
        values, mask = train.numeric_matrix(numeric)
        knn = knn_fit(values, mask, k, numeric)
    return TableImputer(knn, mode_fit(train))
