"""Synthetic tabular data with known ground truth, used to exercise the full
protocol where the real clinical records are unavailable."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from shapfs.seeding import substream
from shapfs.tabular import (CATEGORICAL, CLASS_LABEL, FEATURE, NUMERIC, ColumnSchema,
                            DataTable, Schema)


@dataclass(frozen=True)
class CategoricalPlan:
    name: str
    levels: tuple[str, ...]
    informative: bool = True
    # optional fixed level probabilities per class (overrides the random draw)
    fixed: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SyntheticSpec:
    class_counts: dict  # class symbol -> rows, in output order
    n_informative: int = 5
    n_noise: int = 0
    categorical: tuple[CategoricalPlan, ...] = ()
    separation: float = 2.0
    class_missing: dict = field(default_factory=dict)  # class -> fraction of feature cells missing
    column_missing: dict = field(default_factory=dict)  # column -> {class: fraction} override
    label_column: str = "Diagnosis"
    numeric_names: tuple[str, ...] = ()
    seed: int = 0

    def validate(self) -> None:
        if len(self.class_counts) < 2:
            raise ValueError("need at least two classes")
        if min(self.class_counts.values()) < 1:
            raise ValueError("class counts must be positive")
        if self.n_informative < 1 and not any(c.informative for c in self.categorical):
            raise ValueError("need at least one informative feature")
        if self.n_noise < 0 or self.n_informative < 0:
            raise ValueError("feature counts must be non-negative")
        for k, rate in self.class_missing.items():
            if k not in self.class_counts or not 0 <= rate < 1:
                raise ValueError(f"bad missingness rate {rate!r} for class {k!r}")
        if self.numeric_names and len(self.numeric_names) != self.n_informative + self.n_noise:
            raise ValueError("numeric_names must name every numeric column")


@dataclass(frozen=True)
class GroundTruth:
    informative: tuple[str, ...]
    noise: tuple[str, ...]
    class_means: dict
    bayes_accuracy: float
    missing_share: dict

    def to_dict(self) -> dict:
        return {
            "informative": list(self.informative),
            "noise": list(self.noise),
            "class_means": {k: [float(v) for v in m] for k, m in self.class_means.items()},
            "bayes_accuracy": self.bayes_accuracy,
            "missing_share": self.missing_share,
        }


def gaussian_bayes_accuracy(mu0, mu1, prior1: float = 0.5) -> float:
    """Closed-form Bayes accuracy for two identity-covariance Gaussians."""
    delta = float(np.linalg.norm(np.asarray(mu1) - np.asarray(mu0)))
    if delta == 0:
        return max(prior1, 1 - prior1)
    prior0 = 1 - prior1
    shift = math.log(prior0 / prior1) / delta
    return float(prior0 * norm.cdf(delta / 2 + shift) + prior1 * norm.cdf(delta / 2 - shift))


def _class_means(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    k, d = len(spec.class_counts), spec.n_informative
    if d == 0:
        return np.zeros((k, 0))
    if k == 2:
        u = np.ones(d) / math.sqrt(d)
        return np.vstack([-0.5 * spec.separation * u, 0.5 * spec.separation * u])
    return rng.normal(size=(k, d)) * spec.separation / math.sqrt(2 * d)


def generate_synthetic(spec: SyntheticSpec) -> tuple[DataTable, Schema, GroundTruth]:
    spec.validate()
    rng = substream(spec.seed, "synthetic")
    classes = list(spec.class_counts)
    counts = [spec.class_counts[c] for c in classes]
    n = sum(counts)
    label = np.repeat(np.array(classes, dtype=object), counts)
    cls_idx = np.repeat(np.arange(len(classes)), counts)

    names_num = list(spec.numeric_names) or (
        [f"inf_{j}" for j in range(spec.n_informative)] + [f"noise_{j}" for j in range(spec.n_noise)])
    means = _class_means(spec, rng)
    inf = rng.normal(size=(n, spec.n_informative)) + means[cls_idx]
    noise = rng.normal(size=(n, spec.n_noise))
    raw = np.hstack([inf, noise])
    # lab-like scales so standardization matters
    scale = rng.uniform(0.5, 50.0, size=raw.shape[1])
    offset = rng.uniform(0.0, 100.0, size=raw.shape[1])
    numeric = np.round(raw * scale + offset, 4)

    schema_cols = [ColumnSchema(nm, NUMERIC, FEATURE) for nm in names_num]
    columns: dict[str, np.ndarray] = {nm: numeric[:, j] for j, nm in enumerate(names_num)}
    informative = list(names_num[: spec.n_informative])
    noise_names = list(names_num[spec.n_informative:])
    for plan in spec.categorical:
        L = len(plan.levels)
        shared = rng.dirichlet(np.ones(L))
        probs = []
        for c in classes:
            if c in plan.fixed:
                probs.append(np.asarray(plan.fixed[c], dtype=float))
            else:
                probs.append(rng.dirichlet(np.ones(L)) if plan.informative else shared)
        draw = np.empty(n, dtype=object)
        for ci, p in enumerate(probs):
            rows = np.flatnonzero(cls_idx == ci)
            draw[rows] = np.array(plan.levels, dtype=object)[rng.choice(L, size=len(rows), p=p / p.sum())]
        columns[plan.name] = draw
        schema_cols.append(ColumnSchema(plan.name, CATEGORICAL, FEATURE))
        (informative if plan.informative else noise_names).append(plan.name)
    schema_cols.append(ColumnSchema(spec.label_column, CATEGORICAL, CLASS_LABEL))

    feat_names = [c.name for c in schema_cols if c.role == FEATURE]
    missing = {nm: np.zeros(n, bool) for nm in feat_names}
    mrng = substream(spec.seed, "missingness")
    for ci, c in enumerate(classes):
        rate = spec.class_missing.get(c, 0.0)
        rows = np.flatnonzero(cls_idx == ci)
        budget = int(round(rate * len(rows) * len(feat_names)))
        special = [nm for nm in feat_names if c in spec.column_missing.get(nm, {})]
        for nm in special:
            m = int(round(spec.column_missing[nm][c] * len(rows)))
            missing[nm][rows[mrng.choice(len(rows), m, replace=False)]] = True
            budget -= m
        general = [nm for nm in feat_names if nm not in special]
        cells = len(rows) * len(general)
        if budget > 0 and cells:
            flat = mrng.choice(cells, min(budget, cells), replace=False)
            for cell in flat:
                missing[general[cell // len(rows)]][rows[cell % len(rows)]] = True

    data, miss = {}, {}
    for col in schema_cols:
        if col.role == CLASS_LABEL:
            data[col.name] = label
            miss[col.name] = np.zeros(n, bool)
            continue
        vals = columns[col.name]
        m = missing[col.name]
        if col.kind == NUMERIC:
            vals = np.where(m, np.nan, vals.astype(float))
        else:
            vals = np.where(m, "", vals).astype(object)
        data[col.name] = vals
        miss[col.name] = m
    table = DataTable(tuple(schema_cols), data, miss)

    if len(classes) == 2:
        prior1 = counts[1] / n
        bayes = gaussian_bayes_accuracy(means[0], means[1], prior1) if spec.n_informative else float("nan")
    else:
        bayes = float("nan")
    truth = GroundTruth(tuple(informative), tuple(noise_names),
                        {c: means[i] for i, c in enumerate(classes)}, bayes,
                        table.missing_share_by_class())
    return table, Schema(tuple(schema_cols)), truth


COHORT_CLASS_COUNTS = {"Bladder": 591, "Prostate": 201, "Kidney": 200, "Uterus": 200, "Cystitis": 144}
COHORT_CLASS_MISSING = {"Bladder": 0.4227, "Prostate": 0.1504, "Kidney": 0.1497,
                       "Uterus": 0.1497, "Cystitis": 0.1078}

_LAB_NAMES = (
    "Age", "Urine_epithelium", "Urine_occult_blood_index", "AG_ratio", "Albumin", "Globulin",
    "Creatinine", "BUN", "eGFR", "Hemoglobin", "Hematocrit", "WBC", "RBC", "Platelets", "MCV",
    "MCH", "MCHC", "RDW", "Neutrophils", "Lymphocytes", "Monocytes", "Eosinophils", "Basophils",
    "Glucose", "Sodium", "Potassium", "Chloride", "ALT", "AST", "Urine_SG", "Urine_pH", "Calcium",
)


def cohort_like_spec(seed: int = 0, n_informative: int = 12, separation: float = 3.0) -> SyntheticSpec:
    """Five-class layout with 39 raw features (32 numeric, 7 categorical with 24 levels).

    One-hot encoding yields 56 columns. ``Calcium`` gets heavier missingness in
    the bladder class so that the 45% pruning bites in some scenarios only.
    """
    cats = (
        CategoricalPlan("Gender", ("F", "M"), True,
                        {"Prostate": (0.0, 1.0), "Uterus": (1.0, 0.0)}),
        CategoricalPlan("Urine_color", ("amber", "red", "yellow")),
        CategoricalPlan("Urine_turbidity", ("clear", "cloudy", "slight", "turbid"), False),
        CategoricalPlan("Urine_occult_blood", ("1+", "2+", "3+", "neg")),
        CategoricalPlan("Urine_protein", ("1+", "2+", "neg", "trace"), False),
        CategoricalPlan("Urine_glucose", ("1+", "2+", "neg", "trace"), False),
        CategoricalPlan("Smoking", ("current", "former", "never")),
    )
    return SyntheticSpec(
        class_counts=dict(COHORT_CLASS_COUNTS),
        n_informative=n_informative,
        n_noise=len(_LAB_NAMES) - n_informative,
        categorical=cats,
        separation=separation,
        class_missing=dict(COHORT_CLASS_MISSING),
        column_missing={"Calcium": {"Bladder": 0.55, "Prostate": 0.30, "Kidney": 0.30,
                                    "Uterus": 0.30, "Cystitis": 0.30}},
        numeric_names=_LAB_NAMES,
        seed=seed,
    )


# Class groupings of the six binary experiments.
BUILTIN_SCENARIOS = (
    ("bc_vs_pc", ("Bladder",), ("Prostate",)),
    ("bc_vs_cystitis", ("Bladder",), ("Cystitis",)),
    ("bc_vs_kc", ("Bladder",), ("Kidney",)),
    ("bc_vs_uc", ("Bladder",), ("Uterus",)),
    ("bc_vs_all", ("Bladder",), ("Prostate", "Kidney", "Uterus", "Cystitis")),
    ("pc_vs_all", ("Prostate",), ("Bladder", "Kidney", "Uterus", "Cystitis")),
)
