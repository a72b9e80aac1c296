"""Column-typed tabular data: CSV ingestion, missingness pruning, label
binarization, stratified splitting and the one-hot/standardizing encoder."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import yaml

from shapfs.seeding import substream

NUMERIC = "numeric"
CATEGORICAL = "categorical"
FEATURE = "feature"
CLASS_LABEL = "class_label"
IGNORE = "ignore"

DEFAULT_MISSING_TOKENS = ("", "NA", "NaN")
STD_EPS = 1e-12


class DataError(ValueError):
    """Raised for malformed input data or violated data contracts."""


@dataclass(frozen=True)
class ColumnSchema:
    name: str
    kind: str = NUMERIC
    role: str = FEATURE

    def __post_init__(self):
        if self.kind not in (NUMERIC, CATEGORICAL):
            raise DataError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.role not in (FEATURE, CLASS_LABEL, IGNORE):
            raise DataError(f"column {self.name!r}: unknown role {self.role!r}")


@dataclass(frozen=True)
class Schema:
    columns: tuple[ColumnSchema, ...]
    missing_tokens: tuple[str, ...] = DEFAULT_MISSING_TOKENS

    def __post_init__(self):
        object.__setattr__(self, "columns", tuple(self.columns))
        object.__setattr__(self, "missing_tokens", tuple(self.missing_tokens))
        _validate_columns(self.columns)

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def to_dict(self) -> dict:
        return {
            "missing_tokens": list(self.missing_tokens),
            "columns": [{"name": c.name, "kind": c.kind, "role": c.role} for c in self.columns],
        }


def _validate_columns(columns: Sequence[ColumnSchema]) -> None:
    names = [c.name for c in columns]
    if len(set(names)) != len(names):
        dupes = sorted({n for n in names if names.count(n) > 1})
        raise DataError(f"duplicate column names: {dupes}")
    n_labels = sum(c.role == CLASS_LABEL for c in columns)
    if n_labels != 1:
        raise DataError(f"schema needs exactly one class_label column, found {n_labels}")


def load_schema(path: str | Path) -> Schema:
    """Read a YAML schema sidecar (``columns`` list plus optional ``missing_tokens``)."""
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    if "columns" not in raw:
        raise DataError(f"{path}: schema file has no 'columns' entry")
    cols = [ColumnSchema(str(c["name"]), c.get("kind", NUMERIC), c.get("role", FEATURE))
            for c in raw["columns"]]
    tokens = raw.get("missing_tokens", list(DEFAULT_MISSING_TOKENS))
    return Schema(tuple(cols), tuple(str(t) for t in tokens))


@dataclass(frozen=True)
class DataTable:
    """Immutable table with an explicit missingness mask per column.

    Numeric columns are float64 arrays, categorical columns are object arrays of
    ``str``. ``missing[name]`` is authoritative; numeric missing cells also hold
    NaN so accidental use of unmasked values cannot go unnoticed.
    """

    schema: tuple[ColumnSchema, ...]
    data: Mapping[str, np.ndarray]
    missing: Mapping[str, np.ndarray]

    def __post_init__(self):
        object.__setattr__(self, "schema", tuple(self.schema))
        _validate_columns(self.schema)
        lengths = {len(self.data[c.name]) for c in self.schema}
        if len(lengths) > 1:
            raise DataError(f"columns have differing lengths: {sorted(lengths)}")
        for c in self.schema:
            self.data[c.name].setflags(write=False)
            self.missing[c.name].setflags(write=False)
        if self.missing[self.label_column].any():
            raise DataError(f"class label column {self.label_column!r} has missing cells")

    @property
    def n_rows(self) -> int:
        return len(self.data[self.schema[0].name]) if self.schema else 0

    @property
    def label_column(self) -> str:
        return next(c.name for c in self.schema if c.role == CLASS_LABEL)

    @property
    def feature_columns(self) -> list[ColumnSchema]:
        return [c for c in self.schema if c.role == FEATURE]

    def column(self, name: str) -> ColumnSchema:
        for c in self.schema:
            if c.name == name:
                return c
        raise KeyError(name)

    def classes(self) -> np.ndarray:
        return self.data[self.label_column]

    def class_counts(self) -> dict[str, int]:
        values, counts = np.unique(self.classes().astype(str), return_counts=True)
        return {str(v): int(n) for v, n in zip(values, counts)}

    def missing_fraction(self, name: str) -> float:
        if self.n_rows == 0:
            return 0.0
        return float(self.missing[name].mean())

    def missing_share_by_class(self) -> dict[str, float]:
        """Fraction of missing feature cells among each class's rows."""
        feats = [c.name for c in self.feature_columns]
        if not feats:
            return {k: 0.0 for k in self.class_counts()}
        mask = np.column_stack([self.missing[f] for f in feats])
        labels = self.classes().astype(str)
        return {str(k): float(mask[labels == k].mean()) for k in sorted(set(labels))}

    def has_missing(self) -> bool:
        return any(self.missing[c.name].any() for c in self.schema)

    def take(self, rows: Sequence[int] | np.ndarray) -> "DataTable":
        rows = np.asarray(rows, dtype=np.intp)
        return DataTable(
            self.schema,
            {c.name: self.data[c.name][rows].copy() for c in self.schema},
            {c.name: self.missing[c.name][rows].copy() for c in self.schema},
        )

    def drop(self, names: Iterable[str]) -> "DataTable":
        names = set(names)
        keep = tuple(c for c in self.schema if c.name not in names)
        return DataTable(keep, {c.name: self.data[c.name] for c in keep},
                         {c.name: self.missing[c.name] for c in keep})

    def replace(self, name: str, values: np.ndarray, missing: np.ndarray | None = None) -> "DataTable":
        data = dict(self.data)
        miss = dict(self.missing)
        data[name] = np.asarray(values)
        miss[name] = np.zeros(len(values), bool) if missing is None else np.asarray(missing, bool)
        return DataTable(self.schema, data, miss)

    def numeric_matrix(self, names: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
        """(values, missing mask) for the given numeric columns, shape (n_rows, len(names))."""
        if not names:
            return np.zeros((self.n_rows, 0)), np.zeros((self.n_rows, 0), bool)
        values = np.column_stack([self.data[n].astype(float) for n in names])
        mask = np.column_stack([self.missing[n] for n in names])
        return values, mask


def table_from_columns(schema: Sequence[ColumnSchema], columns: Mapping[str, Sequence]) -> DataTable:
    """Build a DataTable from python sequences where ``None`` (or NaN) marks a missing cell."""
    data, missing = {}, {}
    for col in schema:
        raw = list(columns[col.name])
        if col.kind == NUMERIC:
            miss = np.array([v is None or (isinstance(v, float) and np.isnan(v)) for v in raw], bool)
            vals = np.array([np.nan if m else float(v) for v, m in zip(raw, miss)], float)
        else:
            miss = np.array([v is None for v in raw], bool)
            vals = np.array(["" if m else str(v) for v, m in zip(raw, miss)], dtype=object)
        data[col.name] = vals
        missing[col.name] = miss
    return DataTable(tuple(schema), data, missing)


def load_csv(path: str | Path, schema: Schema | Sequence[ColumnSchema],
             missing_tokens: Sequence[str] | None = None) -> DataTable:
    """Parse a CSV file against ``schema``.

    Empty fields and any of the missing tokens become missing cells. A
    non-numeric value in a numeric column is an error, never silently missing.
    """
    if not isinstance(schema, Schema):
        schema = Schema(tuple(schema), tuple(missing_tokens or DEFAULT_MISSING_TOKENS))
    tokens = set(missing_tokens if missing_tokens is not None else schema.missing_tokens)
    tokens.add("")
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        unknown = [h for h in header if h not in schema.names]
        if unknown:
            raise DataError(f"{path}: unknown column(s) {unknown}")
        absent = [n for n in schema.names if n not in header]
        if absent:
            raise DataError(f"{path}: schema column(s) {absent} not in header")
        if len(set(header)) != len(header):
            raise DataError(f"{path}: duplicate header names")
        pos = {h: i for i, h in enumerate(header)}
        cells: dict[str, list] = {c.name: [] for c in schema.columns}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {lineno} has {len(row)} fields, expected {len(header)}")
            for col in schema.columns:
                text = row[pos[col.name]].strip()
                if text in tokens:
                    cells[col.name].append(None)
                elif col.kind == NUMERIC:
                    try:
                        cells[col.name].append(float(text))
                    except ValueError:
                        raise DataError(
                            f"{path}: row {lineno}, column {col.name!r}: cannot parse {text!r} as a number"
                        ) from None
                else:
                    cells[col.name].append(text)

    label = next(c.name for c in schema.columns if c.role == CLASS_LABEL)
    gaps = [i for i, v in enumerate(cells[label]) if v is None]
    if gaps:
        raise DataError(f"{path}: row {gaps[0] + 2}, column {label!r}: class label is missing")
    return table_from_columns(schema.columns, cells)


def write_csv(table: DataTable, path: str | Path, missing_token: str = "NA") -> None:
    names = [c.name for c in table.schema]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(names)
        for i in range(table.n_rows):
            row = []
            for c in table.schema:
                if table.missing[c.name][i]:
                    row.append(missing_token)
                elif c.kind == NUMERIC:
                    row.append(repr(float(table.data[c.name][i])))
                else:
                    row.append(table.data[c.name][i])
            writer.writerow(row)


def drop_high_missing(table: DataTable, threshold: float) -> tuple[DataTable, list[tuple[str, float]]]:
    """Remove feature columns whose missing fraction strictly exceeds ``threshold``.

    Returns the pruned table and an audit list of ``(column, missing_fraction)``.
    """
    if not 0 < threshold <= 1:
        raise ValueError(f"threshold must be in (0, 1], got {threshold}")
    dropped = [(c.name, table.missing_fraction(c.name)) for c in table.feature_columns
               if table.missing_fraction(c.name) > threshold]
    return table.drop(name for name, _ in dropped), dropped


@dataclass(frozen=True)
class BinaryScenario:
    name: str
    positive_classes: frozenset[str]
    negative_classes: frozenset[str]

    def __post_init__(self):
        object.__setattr__(self, "positive_classes", frozenset(self.positive_classes))
        object.__setattr__(self, "negative_classes", frozenset(self.negative_classes))
        if not self.positive_classes or not self.negative_classes:
            raise DataError(f"scenario {self.name!r}: positive and negative sets must be non-empty")
        overlap = self.positive_classes & self.negative_classes
        if overlap:
            raise DataError(f"scenario {self.name!r}: classes {sorted(overlap)} on both sides")

    @classmethod
    def versus_rest(cls, name: str, positive: Iterable[str], all_classes: Iterable[str]) -> "BinaryScenario":
        positive = frozenset(positive)
        return cls(name, positive, frozenset(all_classes) - positive)


def binarize(table: DataTable, scenario: BinaryScenario) -> tuple[DataTable, np.ndarray]:
    """Keep rows of the scenario's classes; label 1 marks the positive side."""
    observed = set(table.class_counts())
    absent = sorted((scenario.positive_classes | scenario.negative_classes) - observed)
    if absent:
        raise DataError(f"scenario {scenario.name!r}: class(es) {absent} not present in data")
    classes = table.classes().astype(str)
    pos = np.isin(classes, sorted(scenario.positive_classes))
    neg = np.isin(classes, sorted(scenario.negative_classes))
    rows = np.flatnonzero(pos | neg)
    labels = pos[rows].astype(np.int64)
    if labels.sum() == 0 or labels.sum() == len(labels):
        raise DataError(f"scenario {scenario.name!r}: one side is empty after filtering")
    return table.take(rows), labels


def per_class_test_counts(counts: Sequence[int], test_fraction: float) -> list[int]:
    """Round-half-up per class; a total mismatch is settled on the largest class."""
    n_test = [int(np.floor(c * test_fraction + 0.5)) for c in counts]
    target = int(np.floor(sum(counts) * test_fraction + 0.5))
    if n_test and sum(n_test) != target:
        largest = int(np.argmax(counts))
        n_test[largest] += 1 if sum(n_test) < target else -1
    return n_test


def stratified_split(labels: np.ndarray, test_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Seeded per-class shuffle split; returns sorted (train, test) index arrays."""
    labels = np.asarray(labels)
    if not 0 < test_fraction < 1:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    classes = np.unique(labels)
    members = [np.flatnonzero(labels == k) for k in classes]
    n_test = per_class_test_counts([len(m) for m in members], test_fraction)
    for k, m, t in zip(classes, members, n_test):
        if t < 1 or t >= len(m):
            raise DataError(f"class {k!r} with {len(m)} rows cannot appear in both partitions")
    rng = substream(seed, "split")
    test = []
    for m, t in zip(members, n_test):
        test.append(m[rng.permutation(len(m))[:t]])
    test = np.sort(np.concatenate(test))
    train = np.setdiff1d(np.arange(len(labels)), test)
    return train, test


@dataclass(frozen=True)
class Encoder:
    """Fitted standardize + one-hot transform.

    ``groups`` maps each encoded column to the source column it came from.
    """

    numeric_stats: dict[str, tuple[float, float]]
    categorical_levels: dict[str, tuple[str, ...]]
    columns: tuple[ColumnSchema, ...]
    encoded_names: tuple[str, ...]
    groups: tuple[str, ...] = field(default=())

    @property
    def n_features(self) -> int:
        return len(self.encoded_names)


def fit_encoder(train: DataTable) -> Encoder:
    stats, levels, names, groups = {}, {}, [], []
    cols = tuple(train.feature_columns)
    for col in cols:
        obs = ~train.missing[col.name]
        if col.kind == NUMERIC:
            x = train.data[col.name][obs].astype(float)
            mean = float(x.mean()) if len(x) else 0.0
            std = float(x.std()) if len(x) else 0.0
            stats[col.name] = (mean, max(std, STD_EPS))
            names.append(col.name)
            groups.append(col.name)
        else:
            lv = tuple(sorted(set(train.data[col.name][obs].tolist())))
            levels[col.name] = lv
            names.extend(f"{col.name}={v}" for v in lv)
            groups.extend(col.name for _ in lv)
    return Encoder(stats, levels, cols, tuple(names), tuple(groups))


def apply_encoder(enc: Encoder, table: DataTable) -> np.ndarray:
    out = np.zeros((table.n_rows, enc.n_features))
    j = 0
    for col in enc.columns:
        if table.missing[col.name].any():
            row = int(np.flatnonzero(table.missing[col.name])[0])
            raise DataError(f"column {col.name!r} row {row}: missing cell reached the encoder "
                            "(impute first)")
        values = table.data[col.name]
        if col.kind == NUMERIC:
            mean, std = enc.numeric_stats[col.name]
            out[:, j] = (values.astype(float) - mean) / std
            j += 1
        else:
            for level in enc.categorical_levels[col.name]:
                out[:, j] = values == level
                j += 1
    return out
