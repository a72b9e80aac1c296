import json
from pathlib import Path

import numpy as np
import pytest
import yaml

from shapfs.cli import main
from shapfs.experiment import Experiment, load_config
from shapfs.synthetic import CategoricalPlan, SyntheticSpec, generate_synthetic
from shapfs.tabular import write_csv

OUTPUTS = ["prep.json", "trials.jsonl", "best_params.json", "model_entire.json", "metrics_entire.json",
           "shap_train.csv", "ranking.csv", "sweep.csv", "model_reduced.json", "metrics_reduced.json",
           "report.json", "report.md"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("ws")
    spec = SyntheticSpec({"A": 70, "B": 40, "C": 30}, n_informative=3, n_noise=3, separation=3.0,
                         categorical=(CategoricalPlan("col", ("r", "s", "t")),),
                         class_missing={"A": 0.2, "B": 0.05, "C": 0.05},
                         column_missing={"noise_2": {"A": 0.9, "B": 0.5, "C": 0.5}}, seed=4)
    table, schema, _ = generate_synthetic(spec)
    write_csv(table, root / "data.csv")
    (root / "schema.yaml").write_text(yaml.safe_dump(schema.to_dict(), sort_keys=False))
    return root


def make_config(root: Path, name="a_vs_b", negative=("B",), **extra):
    cfg = {"dataset": "data.csv", "schema": "schema.yaml",
           "scenario": {"name": name, "positive": ["A"], "negative": list(negative) if negative != "rest" else "rest"},
           "trial_budget": 2, "seed": 0, "out": f"out/{name}"}
    cfg.update(extra)
    path = root / f"{name}.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return path


def test_run_writes_all_outputs(workspace, capsys):
    cfg = make_config(workspace)
    assert main(["run", "--config", str(cfg)]) == 0
    out = workspace / "out" / "a_vs_b"
    for name in OUTPUTS:
        assert (out / name).exists(), name
    rep = json.loads((out / "report.json").read_text())
    assert [r["Model"] for r in rep["rows"]] == ["Reduced", "Entire"]
    assert list(rep["rows"][0]) == ["Exp.", "Model", "Alg.", "N", "ACC", "BACC", "Prec.", "Sens.", "Spec.", "F1"]
    assert rep["dropped_columns"][0]["column"] == "noise_2"
    assert rep["search"]["trials"] == 2
    assert "| Exp. | Model | Alg. | N |" in capsys.readouterr().out


def test_every_output_is_stamped(workspace):
    cfg = make_config(workspace, "stamped")
    assert main(["run", "--config", str(cfg)]) == 0
    exp = Experiment(load_config(cfg))
    digest = exp.stamp["config_sha256"]
    out = workspace / "out" / "stamped"
    for name in OUTPUTS:
        if name == "report.md":
            continue
        assert digest in (out / name).read_text(), name


def test_rerun_is_byte_identical(workspace, tmp_path):
    cfg = make_config(workspace, "det")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "one")]) == 0
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "two")]) == 0
    for name in OUTPUTS:
        assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "two" / name).read_bytes(), name


def test_seed_change_keeps_structure(workspace, tmp_path):
    cfg = make_config(workspace, "seeds")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "s0")]) == 0
    assert main(["run", "--config", str(cfg), "--seed", "5", "--out", str(tmp_path / "s5")]) == 0
    a = json.loads((tmp_path / "s0" / "report.json").read_text())
    b = json.loads((tmp_path / "s5" / "report.json").read_text())
    assert a.keys() == b.keys()
    assert [list(r) for r in a["rows"]] == [list(r) for r in b["rows"]]
    assert a["stamp"]["seed"] == 0 and b["stamp"]["seed"] == 5


def test_stages_reproduce_run(workspace, tmp_path):
    cfg = make_config(workspace, "stages")
    out = tmp_path / "staged"
    for stage in ["prep", "tune", "train", "explain", "select"]:
        assert main([stage, "--config", str(cfg), "--out", str(out)]) == 0
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "whole")]) == 0
    for name in ["trials.jsonl", "model_entire.json", "ranking.csv", "sweep.csv", "model_reduced.json",
                 "metrics_reduced.json"]:
        assert (out / name).read_bytes() == (tmp_path / "whole" / name).read_bytes(), name


def test_stage_out_of_order_is_tagged(workspace, tmp_path, capsys):
    cfg = make_config(workspace, "order")
    assert main(["explain", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 1
    assert "[explain]" in capsys.readouterr().err


def test_missing_config_no_outputs(tmp_path, capsys):
    out = tmp_path / "never"
    code = main(["run", "--config", str(tmp_path / "nope.yaml"), "--out", str(out)])
    assert code != 0
    assert not out.exists()
    assert "not found" in capsys.readouterr().err


def test_unknown_command_and_flag():
    with pytest.raises(SystemExit) as e:
        main(["bogus"])
    assert e.value.code != 0
    with pytest.raises(SystemExit) as e:
        main(["run", "--frobnicate"])
    assert e.value.code != 0


def test_bad_dataset_is_stage_tagged(workspace, capsys):
    cfg = make_config(workspace, "bad")
    raw = yaml.safe_load(cfg.read_text())
    raw["dataset"] = "missing.csv"
    cfg.write_text(yaml.safe_dump(raw))
    assert main(["run", "--config", str(cfg)]) == 1
    assert "[prep]" in capsys.readouterr().err


def test_versus_rest_scenario(workspace):
    cfg = make_config(workspace, "a_vs_rest", negative="rest")
    exp = Experiment(load_config(cfg))
    prep = exp.prep()
    assert prep.audit["class_counts"] == {"positive": 70, "negative": 70}
    assert prep.audit["scenario"]["negative"] == ["B", "C"]


def test_scenario_override_and_holdout_sweep(workspace, tmp_path):
    # built-in scenario names need the five reference classes; our dataset lacks them
    cfg = make_config(workspace, "ovr")
    assert main(["prep", "--config", str(cfg), "--scenario", "bc_vs_pc", "--out", str(tmp_path / "o")]) == 1
    assert main(["run", "--config", str(cfg), "--sweep-mode", "holdout", "--out", str(tmp_path / "p")]) == 0
    rep = json.loads((tmp_path / "p" / "report.json").read_text())
    assert rep["sweep"]["mode"] == "paper_protocol"


def test_report_merges(workspace, tmp_path, capsys):
    a = make_config(workspace, "m1")
    b = make_config(workspace, "m2", negative=("C",))
    assert main(["run", "--config", str(a), "--out", str(tmp_path / "m1")]) == 0
    assert main(["run", "--config", str(b), "--out", str(tmp_path / "m2")]) == 0
    capsys.readouterr()
    assert main(["report", str(tmp_path / "m1"), str(tmp_path / "m2"), "--out", str(tmp_path / "sum")]) == 0
    md = (tmp_path / "sum" / "summary.md").read_text().splitlines()
    assert md[0] == "| Exp. | Model | Alg. | N | ACC(%) | BACC(%) | Prec.(%) | Sens.(%) | Spec.(%) | F1(%) |"
    assert len(md) == 2 + 4
    csv_lines = (tmp_path / "sum" / "summary.csv").read_text().splitlines()
    assert len(csv_lines) == 5
    # percentages with two decimals
    assert all(len(cell.split(".")[1]) == 2 for cell in csv_lines[1].split(",")[4:])


def test_synth_command(tmp_path):
    assert main(["synth", "--out", str(tmp_path / "d"), "--seed", "2"]) == 0
    names = {p.name for p in (tmp_path / "d").iterdir()}
    assert {"synthetic.csv", "schema.yaml", "truth.json", "bc_vs_uc.yaml", "pc_vs_all.yaml"} <= names
    cfg = load_config(tmp_path / "d" / "bc_vs_pc.yaml")
    assert cfg.seed == 2 and cfg.trial_budget == 100


def test_config_defaults(workspace):
    cfg = load_config(make_config(workspace, "defaults"))
    assert (cfg.missing_threshold, cfg.test_fraction, cfg.cv_folds) == (0.45, 0.2, 5)
    assert cfg.smote.k_neighbors == 5 and cfg.smote.target_ratio == 1.0
    assert cfg.sweep_mode == "cv_protocol"
