"""Command-line entry point: ``shapfs <command> [flags]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from shapfs import __version__
from shapfs.experiment import (ConfigError, Experiment, StageError, atomic_write, atomic_write_with,
                               dump_json, format_csv, format_table, load_config)
from shapfs.synthetic import BUILTIN_SCENARIOS, generate_synthetic, cohort_like_spec
from shapfs.tabular import write_csv

STAGES = ("prep", "tune", "train", "explain", "select")
SCENARIOS = {name: (pos, neg) for name, pos, neg in BUILTIN_SCENARIOS}

log = logging.getLogger("shapfs")


def _overrides(args) -> dict:
    ov = {"seed": args.seed, "sweep_mode": args.sweep_mode}
    if args.out is not None:
        ov["out"] = str(Path(args.out).resolve())
    if args.scenario is not None:
        if args.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {args.scenario!r}; choose from {sorted(SCENARIOS)}")
        pos, neg = SCENARIOS[args.scenario]
        ov["scenario"] = {"name": args.scenario, "positive": list(pos), "negative": list(neg)}
    return ov


def _experiment(args) -> Experiment:
    if args.config is None:
        raise ConfigError("--config is required")
    return Experiment(load_config(args.config, _overrides(args)))


def cmd_stage(args) -> int:
    exp = _experiment(args)
    result = exp.run_stage(args.command)
    if args.command == "prep":
        dropped = result["dropped_columns"]
        print(f"prep: {result['class_counts']} rows; dropped {len(dropped)} column(s)"
              + "".join(f"\n  {d['column']}: {100 * d['missing_fraction']:.2f}% missing" for d in dropped))
    elif args.command == "tune":
        print(f"tune: best trial {result.number} mean BACC {result.mean_bacc:.4f}")
    elif args.command == "explain":
        print("explain: top features " + ", ".join(result.names[:10]))
    else:
        print(f"{args.command}: test BACC {result.bacc:.4f}")
    print(f"outputs in {exp.out}")
    return 0


def cmd_run(args) -> int:
    exp = _experiment(args)
    report = exp.run()
    print(format_table([report]), end="")
    print(f"outputs in {exp.out}")
    return 0


def cmd_synth(args) -> int:
    if args.out is None:
        raise ConfigError("synth needs --out <dir>")
    out = Path(args.out)
    seed = 0 if args.seed is None else args.seed
    table, schema, truth = generate_synthetic(cohort_like_spec(seed))
    atomic_write_with(out / "synthetic.csv", lambda p: write_csv(table, p))
    atomic_write(out / "schema.yaml", yaml.safe_dump(schema.to_dict(), sort_keys=False))
    atomic_write(out / "truth.json", dump_json(truth.to_dict()))
    for name, pos, neg in BUILTIN_SCENARIOS:
        cfg = {"dataset": "synthetic.csv", "schema": "schema.yaml",
               "scenario": {"name": name, "positive": list(pos), "negative": list(neg)},
               "seed": seed, "out": f"out/{name}"}
        atomic_write(out / f"{name}.yaml", yaml.safe_dump(cfg, sort_keys=False))
    print(f"synth: {table.n_rows} rows, class counts {table.class_counts()} -> {out}")
    return 0


def cmd_report(args) -> int:
    dirs = [Path(d) for d in args.dirs]
    if not dirs:
        raise ConfigError("report needs one or more experiment output directories")
    reports = []
    for d in dirs:
        path = d / "report.json" if d.is_dir() else d
        if not path.exists():
            raise StageError("report", f"{path} not found")
        reports.append(json.loads(path.read_text()))
    table = format_table(reports)
    if args.out is not None:
        out = Path(args.out)
        atomic_write(out / "summary.md", table)
        atomic_write(out / "summary.csv", format_csv(reports))
    print(table, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config (YAML)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--scenario", help=f"override the scenario: one of {', '.join(SCENARIOS)}")
    common.add_argument("--sweep-mode", choices=("holdout", "cv"), help="N-sweep scoring protocol")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true", help="log every search trial")

    parser = argparse.ArgumentParser(prog="shapfs", description="SHAP-guided feature selection "
                                     "for gradient-boosted tree classifiers on tabular data.")
    parser.add_argument("--version", action="version", version=f"shapfs {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    helps = {"prep": "load, prune and audit missingness, split",
             "tune": "random search with stratified CV; writes the trial history",
             "train": "fit the final model on the training split",
             "explain": "TreeSHAP export and mean |SHAP| ranking",
             "select": "top-N sweep and the reduced model"}
    for st in STAGES:
        sub.add_parser(st, parents=[common], help=helps[st]).set_defaults(func=cmd_stage)
    sub.add_parser("run", parents=[common], help="full protocol").set_defaults(func=cmd_run)
    sub.add_parser("synth", parents=[common],
                   help="write a synthetic five-class dataset, schema, and six scenario configs"
                   ).set_defaults(func=cmd_synth)
    rp = sub.add_parser("report", parents=[common], help="merge report.json files into one table")
    rp.add_argument("dirs", nargs="*", help="experiment output directories or report.json files")
    rp.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except StageError as exc:
        print(f"shapfs {args.command}: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, OSError, ValueError) as exc:
        print(f"shapfs {args.command}: [config] {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
