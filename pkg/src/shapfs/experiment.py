"""One binary experiment end to end: prune, binarize, split, tune, train,
explain, sweep, and emit a report with the published table's row layout."""
from __future__ import annotations

import hashlib
import json
import logging
import os
import platform
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from shapfs import __version__
from shapfs.gbdt import DEPTH_WISE, Ensemble, HyperParams, dumps, loads
from shapfs.model_selection import (FoldCache, MetricsReport, TrialRecord, cross_val_bacc,
                                    evaluate_labels, default_search_space, search, split_params,
                                    trials_from_jsonl, trials_to_jsonl)
from shapfs.pipeline import PreparedSplit, fit_encoded, prepare_split, seeded, select_columns
from shapfs.resampling import SmoteConfig
from shapfs.seeding import stage_seed
from shapfs.selection import (CV_PROTOCOL, PAPER_PROTOCOL, SweepResult, select_features, sweep,
                              write_curve_csv)
from shapfs.tabular import (BinaryScenario, DataTable, binarize, drop_high_missing, load_csv,
                            load_schema, stratified_split)
from shapfs.treeshap import (FeatureRanking, ShapMatrix, rank_features, read_ranking_csv,
                             shap_values, write_ranking_csv, write_shap_csv)

logger = logging.getLogger(__name__)

SWEEP_MODES = {"cv": CV_PROTOCOL, "holdout": PAPER_PROTOCOL,
               CV_PROTOCOL: CV_PROTOCOL, PAPER_PROTOCOL: PAPER_PROTOCOL}
REPORT_COLUMNS = ("Exp.", "Model", "Alg.", "N", "ACC(%)", "BACC(%)", "Prec.(%)", "Sens.(%)",
                  "Spec.(%)", "F1(%)")
ALG_LABELS = {DEPTH_WISE: "GBDT-depthwise", "leaf_wise": "GBDT-leafwise"}


class StageError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: Path
    schema: Path
    scenario: BinaryScenario
    missing_threshold: float = 0.45
    test_fraction: float = 0.2
    cv_folds: int = 5
    trial_budget: int = 100
    search_family: str = "union"
    smote: SmoteConfig = field(default_factory=SmoteConfig)
    sweep_mode: str = CV_PROTOCOL
    seed: int = 0
    out: Path = Path("out")
    # "rest" on the negative side means every other observed class
    negative_is_rest: bool = False

    def digest(self) -> str:
        """sha256 over the settings and the input file contents (not their paths or the out dir)."""
        doc = {
            "dataset_sha256": _file_sha256(self.dataset),
            "schema_sha256": _file_sha256(self.schema),
            "scenario": {"name": self.scenario.name,
                         "positive": sorted(self.scenario.positive_classes),
                         "negative": "rest" if self.negative_is_rest else sorted(self.scenario.negative_classes)},
            "missing_threshold": self.missing_threshold, "test_fraction": self.test_fraction,
            "cv_folds": self.cv_folds, "trial_budget": self.trial_budget,
            "search_family": self.search_family,
            "smote": {"k_neighbors": self.smote.k_neighbors, "target_ratio": self.smote.target_ratio},
            "sweep_mode": self.sweep_mode, "seed": self.seed,
        }
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def _file_sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def load_config(path: str | Path, overrides: dict | None = None) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    base = path.parent

    def resolve(key: str) -> Path:
        if key not in raw:
            raise ConfigError(f"{path}: missing required key {key!r}")
        p = Path(raw[key])
        return p if p.is_absolute() else base / p

    sc = raw.get("scenario")
    if not isinstance(sc, dict) or "positive" not in sc or "negative" not in sc:
        raise ConfigError(f"{path}: 'scenario' needs 'positive' and 'negative' class lists")
    positive = [str(c) for c in _as_list(sc["positive"])]
    rest = sc["negative"] == "rest"
    negative = [] if rest else [str(c) for c in _as_list(sc["negative"])]
    name = str(sc.get("name", path.stem))
    sm = raw.get("smote", {}) or {}
    mode = SWEEP_MODES.get(str(raw.get("sweep_mode", "cv")))
    if mode is None:
        raise ConfigError(f"{path}: sweep_mode must be 'cv' or 'holdout'")
    out = raw.get("out", f"out/{name}")
    out = Path(out) if Path(out).is_absolute() else base / out
    try:
        scenario = BinaryScenario(name, frozenset(positive), frozenset(negative or ["__rest__"]))
        return ExperimentConfig(
            dataset=resolve("dataset"), schema=resolve("schema"), scenario=scenario,
            missing_threshold=float(raw.get("missing_threshold", 0.45)),
            test_fraction=float(raw.get("test_fraction", 0.2)),
            cv_folds=int(raw.get("cv_folds", 5)),
            trial_budget=int(raw.get("trial_budget", 100)),
            search_family=str(raw.get("search_family", "union")),
            smote=SmoteConfig(int(sm.get("k_neighbors", 5)), float(sm.get("target_ratio", 1.0))),
            sweep_mode=mode, seed=int(raw.get("seed", 0)), out=out, negative_is_rest=rest,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _as_list(v) -> list:
    return list(v) if isinstance(v, (list, tuple)) else [v]


# ---------------------------------------------------------------------------
# output helpers


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_with(path: Path, writer, *args, **kwargs) -> None:
    """Run a ``writer(path, ...)`` function against a temp file, then rename."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        writer(tmp, *args, **kwargs)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj: Any, sort_keys: bool = True) -> str:
    return json.dumps(obj, indent=2, sort_keys=sort_keys) + "\n"


# ---------------------------------------------------------------------------
# the experiment


@dataclass
class Prepared:
    table: DataTable
    labels: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray
    dropped: list
    audit: dict

    @property
    def train(self) -> DataTable:
        return self.table.take(self.train_idx)

    @property
    def test(self) -> DataTable:
        return self.table.take(self.test_idx)

    @property
    def y_train(self) -> np.ndarray:
        return self.labels[self.train_idx]

    @property
    def y_test(self) -> np.ndarray:
        return self.labels[self.test_idx]


class Experiment:
    """Stage-by-stage driver; every stage writes its artifacts into ``cfg.out``."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.out = Path(cfg.out)
        self._digest = None

    @property
    def stamp(self) -> dict:
        if self._digest is None:
            self._digest = self.cfg.digest()
        return {"tool": "shapfs", "version": __version__, "seed": self.cfg.seed,
                "config_sha256": self._digest}

    def stamp_line(self) -> str:
        s = self.stamp
        return f"shapfs {s['version']} seed={s['seed']} config_sha256={s['config_sha256']}"

    def _stage(self, name: str, fn, *args):
        try:
            return fn(*args)
        except StageError:
            raise
        except Exception as exc:  # noqa: BLE001 -- re-raised with stage context
            raise StageError(name, f"{type(exc).__name__}: {exc}") from exc

    # -- stages ------------------------------------------------------------

    def prep(self) -> Prepared:
        return self._stage("prep", self._prep)

    def _prep(self) -> Prepared:
        cfg = self.cfg
        schema = load_schema(cfg.schema)
        table = load_csv(cfg.dataset, schema)
        scenario = cfg.scenario
        if cfg.negative_is_rest:
            scenario = BinaryScenario.versus_rest(scenario.name, scenario.positive_classes,
                                                  table.class_counts())
        sub, labels = binarize(table, scenario)
        pruned, dropped = drop_high_missing(sub, cfg.missing_threshold)
        train_idx, test_idx = stratified_split(labels, cfg.test_fraction, stage_seed(cfg.seed, "split"))
        audit = {
            "stamp": self.stamp,
            "scenario": {"name": scenario.name, "positive": sorted(scenario.positive_classes),
                         "negative": sorted(scenario.negative_classes)},
            "class_counts": {"positive": int(labels.sum()), "negative": int(len(labels) - labels.sum())},
            "missing_fraction": {c.name: sub.missing_fraction(c.name) for c in sub.feature_columns},
            "missing_share_by_class": table.missing_share_by_class(),
            "missing_threshold": cfg.missing_threshold,
            "dropped_columns": [{"column": n, "missing_fraction": f} for n, f in dropped],
            "max_retained_missing_fraction": max(
                [pruned.missing_fraction(c.name) for c in pruned.feature_columns], default=0.0),
            "split": {"train": int(len(train_idx)), "test": int(len(test_idx)),
                      "train_positive": int(labels[train_idx].sum()),
                      "test_positive": int(labels[test_idx].sum())},
        }
        atomic_write(self.out / "prep.json", dump_json(audit))
        return Prepared(pruned, labels, train_idx, test_idx, dropped, audit)

    def tune(self, prep: Prepared) -> tuple[TrialRecord, list[TrialRecord], FoldCache]:
        return self._stage("tune", self._tune, prep)

    def _tune(self, prep: Prepared):
        cfg = self.cfg
        space = default_search_space(cfg.search_family)
        cache = FoldCache(prep.train, prep.y_train, cfg.cv_folds, cfg.seed)

        def objective(hp, knn_k):
            return cross_val_bacc(prep.train, prep.y_train, hp, knn_k, cfg.smote, cfg.seed,
                                  cfg.cv_folds, cache=cache)

        history: list[TrialRecord] = []
        best = search(space, cfg.trial_budget, objective, cfg.seed, history=history,
                      on_trial=lambda r: logger.info("trial %d mean BACC %.4f", r.number, r.mean_bacc))
        atomic_write(self.out / "trials.jsonl", f"# {self.stamp_line()}\n" + trials_to_jsonl(history))
        atomic_write(self.out / "best_params.json",
                     dump_json({"stamp": self.stamp, "trial": best.number, "params": best.params,
                                "mean_bacc": best.mean_bacc}))
        return best, history, cache

    def load_best(self) -> TrialRecord:
        path = self.out / "best_params.json"
        if not path.exists():
            raise StageError("train", f"{path} not found; run the tune stage first")
        doc = json.loads(path.read_text())
        trials = trials_from_jsonl((self.out / "trials.jsonl").read_text())
        return trials[int(doc["trial"])]

    def fit_final(self, prep: Prepared, best: TrialRecord, prepared: PreparedSplit | None = None):
        return self._stage("train", self._fit_final, prep, best, prepared)

    def _final_seeds(self, hp: HyperParams):
        return seeded(hp, self.cfg.smote, stage_seed(self.cfg.seed, "model", "final"),
                      stage_seed(self.cfg.seed, "smote", "final"))

    def _fit_final(self, prep: Prepared, best: TrialRecord, prepared: PreparedSplit | None):
        hp, knn_k = split_params(best.params)
        if prepared is None:
            prepared = prepare_split(prep.train, prep.test, knn_k)
        hp_f, sm_f = self._final_seeds(hp)
        ens = fit_encoded(prepared.X_fit, prep.y_train, hp_f, sm_f, prepared.encoder.encoded_names)
        metrics = evaluate_labels(prep.y_test, ens.predict_label(prepared.X_eval))
        atomic_write(self.out / "model_entire.json", dumps(ens, self.stamp))
        atomic_write(self.out / "metrics_entire.json",
                     dump_json({"stamp": self.stamp, "metrics": metrics.to_dict(),
                                "n_features": ens.n_features}))
        return ens, prepared, metrics

    def explain(self, prep: Prepared, ens: Ensemble, prepared: PreparedSplit) -> tuple[ShapMatrix, FeatureRanking]:
        return self._stage("explain", self._explain, prep, ens, prepared)

    def _explain(self, prep: Prepared, ens: Ensemble, prepared: PreparedSplit):
        if tuple(prepared.encoder.encoded_names) != ens.encoded_names:
            raise ValueError("model features do not match the encoded training data")
        shap = shap_values(ens, prepared.X_fit)
        ranking = rank_features(shap, ens.encoded_names)
        atomic_write_with(self.out / "shap_train.csv", write_shap_csv, shap, ens.encoded_names,
                          self.stamp_line())
        atomic_write_with(self.out / "ranking.csv", write_ranking_csv, ranking, self.stamp_line())
        return shap, ranking

    def select(self, prep: Prepared, best: TrialRecord, ranking: FeatureRanking,
               prepared: PreparedSplit, cache: FoldCache | None = None):
        return self._stage("select", self._select, prep, best, ranking, prepared, cache)

    def _select(self, prep, best, ranking, prepared, cache):
        cfg = self.cfg
        hp, knn_k = split_params(best.params)
        result = sweep(prep.train, prep.y_train, prep.test, prep.y_test, ranking, hp, knn_k,
                       cfg.smote, cfg.seed, mode=cfg.sweep_mode, n_folds=cfg.cv_folds,
                       prepared=prepared, cache=cache)
        atomic_write_with(self.out / "sweep.csv", write_curve_csv, result, self.stamp_line())
        hp_f, sm_f = self._final_seeds(hp)
        cols = list(result.selected_features)
        ens = fit_encoded(prepared.X_fit, prep.y_train, hp_f, sm_f, prepared.encoder.encoded_names, cols)
        metrics = evaluate_labels(prep.y_test, ens.predict_label(select_columns(prepared.X_eval, cols)))
        atomic_write(self.out / "model_reduced.json", dumps(ens, self.stamp))
        atomic_write(self.out / "metrics_reduced.json",
                     dump_json({"stamp": self.stamp, "metrics": metrics.to_dict(),
                                "n_features": len(cols), "selected_features": list(ens.encoded_names)}))
        return result, ens, metrics

    # -- artifacts from earlier stages ----------------------------------------

    def _require(self, stage: str, name: str) -> Path:
        path = self.out / name
        if not path.exists():
            raise StageError(stage, f"{path} not found; run the earlier stage first")
        return path

    def load_model(self, stage: str, name: str = "model_entire.json") -> Ensemble:
        return loads(self._require(stage, name).read_text())

    def load_ranking(self, stage: str) -> FeatureRanking:
        return read_ranking_csv(self._require(stage, "ranking.csv"))

    def run_stage(self, stage: str):
        """Run one stage, reloading upstream artifacts from the out dir.

        ``prep`` is cheap and deterministic, so it is always recomputed.
        """
        prep = self.prep()
        if stage == "prep":
            return prep.audit
        if stage == "tune":
            return self.tune(prep)[0]
        self._require(stage, "best_params.json")
        best = self.load_best()
        if stage == "train":
            return self.fit_final(prep, best)[2]
        prepared = self._stage(stage, prepare_split, prep.train, prep.test, best.knn_k)
        if stage == "explain":
            return self.explain(prep, self.load_model(stage), prepared)[1]
        if stage == "select":
            return self.select(prep, best, self.load_ranking(stage), prepared)[2]
        raise ValueError(f"unknown stage {stage!r}")

    # -- full protocol -------------------------------------------------------

    def run(self) -> dict:
        prep = self.prep()
        best, history, cache = self.tune(prep)
        ens, prepared, entire = self.fit_final(prep, best)
        _, ranking = self.explain(prep, ens, prepared)
        result, reduced_ens, reduced = self.select(prep, best, ranking, prepared, cache)
        report = self.build_report(prep, best, len(history), ens, entire, result, reduced_ens, reduced)
        # insertion order keeps the table's column order in each row
        atomic_write(self.out / "report.json", dump_json(report, sort_keys=False))
        atomic_write(self.out / "report.md", format_table([report]))
        return report

    def build_report(self, prep: Prepared, best: TrialRecord, n_trials: int, ens: Ensemble,
                     entire: MetricsReport, result: SweepResult, reduced_ens: Ensemble,
                     reduced: MetricsReport) -> dict:
        hp, knn_k = split_params(best.params)
        alg = ALG_LABELS[hp.growth]
        name = prep.audit["scenario"]["name"]
        return {
            "stamp": self.stamp,
            "environment": {"python": platform.python_version(), "numpy": np.__version__},
            "experiment": name,
            "scenario": prep.audit["scenario"],
            "class_counts": prep.audit["class_counts"],
            "split": prep.audit["split"],
            "dropped_columns": prep.audit["dropped_columns"],
            "n_encoded_features": ens.n_features,
            "rows": [
                _row(name, "Reduced", alg, result.best_n, reduced),
                _row(name, "Entire", alg, ens.n_features, entire),
            ],
            "search": {"trials": n_trials, "family": self.cfg.search_family,
                       "best_trial": best.number, "best_cv_bacc": best.mean_bacc,
                       "best_params": best.params, "knn_k": knn_k, "history": "trials.jsonl"},
            "sweep": {"mode": result.mode, "n_min": result.curve[0].n, "n_max": result.curve[-1].n,
                      "best_n": result.best_n, "best_score": result.best.bacc, "curve": "sweep.csv",
                      "selected_features": list(reduced_ens.encoded_names)},
            "exports": {"shap": "shap_train.csv", "ranking": "ranking.csv",
                        "model_entire": "model_entire.json", "model_reduced": "model_reduced.json"},
        }


def _row(exp: str, model: str, alg: str, n: int, m: MetricsReport) -> dict:
    return {"Exp.": exp, "Model": model, "Alg.": alg, "N": int(n),
            "ACC": m.acc, "BACC": m.bacc, "Prec.": m.precision, "Sens.": m.sensitivity,
            "Spec.": m.specificity, "F1": m.f1}


def _pct(v: float) -> str:
    return f"{100 * v:.2f}"


def table_rows(reports: list[dict]) -> list[list[str]]:
    rows = []
    for rep in reports:
        for r in rep["rows"]:
            rows.append([r["Exp."], r["Model"], r["Alg."], str(r["N"])]
                        + [_pct(r[k]) for k in ("ACC", "BACC", "Prec.", "Sens.", "Spec.", "F1")])
    return rows


def format_table(reports: list[dict]) -> str:
    """Markdown table with one Reduced and one Entire row per experiment."""
    lines = ["| " + " | ".join(REPORT_COLUMNS) + " |",
             "|" + "|".join("---" for _ in REPORT_COLUMNS) + "|"]
    lines += ["| " + " | ".join(r) + " |" for r in table_rows(reports)]
    return "\n".join(lines) + "\n"


def format_csv(reports: list[dict]) -> str:
    import csv
    import io

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    w.writerows(table_rows(reports))
    return buf.getvalue()
