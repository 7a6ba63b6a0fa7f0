"""Command-line interface.

Subcommands:
  gen-data  --spec FILE --out DIR       materialize synthetic clients as CSV
  run       --config FILE --out FILE    run one experiment, write a report
  compare   --configs FILES --out FILE  run several configs, write a CSV table
  analyze   --scenario FILE --out FILE  closed-form two-cluster analysis
  metrics   --input FILE                fairness gaps of a predictions CSV

Exit codes: 0 success, 2 config/scenario validation failure, 1 runtime error.
All randomness is controlled by the seeds in the input files.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from typing import Optional

from .analytic import (
    TwoClusterScenario,
    analytic_gap,
    average_gap,
    critical_cluster_size,
    gap_curve,
    global_threshold,
    optimal_threshold,
    sp_condition_check,
)
from .data import GaussianClientSpec, generate_clients
from .errors import ConfigError, ValidationError
from .fairness import GROUP_NAMES, all_gaps
from .harness import (
    compare_algorithms,
    emit_comparison,
    emit_report,
    load_config,
    run_experiment,
)


def _load_toml(path: str) -> dict:
    if sys.version_info >= (3, 11):
        import tomllib
    else:
        import tomli as tomllib
    with open(path, "rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as err:
            raise ConfigError(f"{path}: {err}") from err


def _cmd_gen_data(args) -> int:
    raw = _load_toml(args.spec)
    seed = raw.get("seed", 0)
    if not isinstance(seed, int) or seed < 0:
        raise ConfigError("seed: must be a non-negative integer")
    clients_raw = raw.get("clients")
    if not isinstance(clients_raw, list) or not clients_raw:
        raise ConfigError("clients: need at least one [[clients]] spec table")
    specs = []
    for i, spec_raw in enumerate(clients_raw):
        try:
            specs.append(GaussianClientSpec.from_dict(spec_raw))
        except (ValidationError, TypeError) as err:
            raise ConfigError(f"clients[{i}]: {err}") from err

    import os

    os.makedirs(args.out, exist_ok=True)
    for client in generate_clients(specs, seed=seed, first_id=1):
        path = os.path.join(args.out, f"client_{client.client_id}.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"x{j}" for j in range(client.dim)] + ["label", "group"])
            for i in range(client.n):
                writer.writerow(
                    [f"{v:.10g}" for v in client.features[i]]
                    + [int(client.labels[i]), GROUP_NAMES[client.groups[i]]]
                )
        print(f"wrote {client.n} samples -> {path}")
    return 0


def _cmd_run(args) -> int:
    config = load_config(args.config)
    report = run_experiment(config)
    emit_report(report, args.out, format=args.format)
    agg = report.aggregates
    print(
        f"{config.algorithm}: accuracy={agg['accuracy']['mean']:.4f} "
        f"sp={agg['sp']['mean'] if agg['sp']['mean'] is not None else 'undefined'}"
    )
    print(f"report -> {args.out}")
    return 0


def _cmd_compare(args) -> int:
    configs = [load_config(p) for p in args.configs]
    rows = compare_algorithms(configs)
    emit_comparison(rows, args.out)
    for row in rows:
        print(row)
    print(f"comparison -> {args.out}")
    return 0


def _scenario_from_toml(raw: dict) -> TwoClusterScenario:
    for key in ("cluster_alpha", "cluster_beta"):
        if key not in raw:
            raise ConfigError(f"{key}: missing cluster spec table")
    if "p" not in raw:
        raise ConfigError("p: missing alpha-cluster fraction")
    try:
        return TwoClusterScenario(
            spec_alpha=GaussianClientSpec.from_dict(raw["cluster_alpha"]),
            spec_beta=GaussianClientSpec.from_dict(raw["cluster_beta"]),
            p=float(raw["p"]),
        )
    except (ValidationError, TypeError) as err:
        raise ConfigError(str(err)) from err


def _cmd_analyze(args) -> int:
    raw = _load_toml(args.scenario)
    scenario = _scenario_from_toml(raw)
    ta = optimal_threshold(scenario.spec_alpha)
    tb = optimal_threshold(scenario.spec_beta)
    out = {
        "p": scenario.p,
        "theta_alpha": ta,
        "theta_beta": tb,
        "theta_global": {
            "average": global_threshold(scenario, "average"),
            "pooled": global_threshold(scenario, "pooled"),
        },
        "condition_sp": {
            "alpha": sp_condition_check(scenario.spec_alpha),
            "beta": sp_condition_check(scenario.spec_beta),
        },
        "gaps": {},
    }
    for metric in ("sp", "eqop", "eo"):
        out["gaps"][metric] = {
            "alpha_at_own": analytic_gap(scenario.spec_alpha, ta, metric),
            "beta_at_own": analytic_gap(scenario.spec_beta, tb, metric),
            "average_clustered": average_gap(scenario, metric, "clustered"),
            "average_global": average_gap(scenario, metric, "global"),
        }
    crit = critical_cluster_size(scenario)
    out["critical_cluster_size"] = {
        "p_hat": crit.p_hat,
        "degenerate": crit.degenerate,
        "theta_global_pooled": crit.theta_global,
        "iterations": crit.iterations,
    }

    curve_cfg = raw.get("gap_curve")
    if curve_cfg:
        path = curve_cfg.get("path")
        if not path:
            raise ConfigError("gap_curve.path: required when [gap_curve] is present")
        metric = curve_cfg.get("metric", "sp")
        n_points = curve_cfg.get("n_points", 201)
        theta_range = None
        if "theta_min" in curve_cfg or "theta_max" in curve_cfg:
            theta_range = (curve_cfg["theta_min"], curve_cfg["theta_max"])
        points = gap_curve(scenario.spec_alpha, metric, theta_range, n_points)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["theta", "gap"])
            for pt in points:
                writer.writerow([f"{pt.theta:.10g}", f"{pt.gap:.10g}"])
        out["gap_curve_path"] = path

    with open(args.out, "w") as fh:
        json.dump(out, fh, indent=2)
        fh.write("\n")
    print(f"analysis -> {args.out}")
    return 0


def _cmd_metrics(args) -> int:
    preds, labels, groups = [], [], []
    with open(args.input, newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"prediction", "label", "group"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise ValidationError(
                f"{args.input}: need columns {sorted(required)}, "
                f"got {reader.fieldnames}"
            )
        for row in reader:
            preds.append(int(float(row["prediction"])))
            labels.append(int(float(row["label"])))
            groups.append(row["group"])
    gaps = all_gaps(preds, labels, groups)
    print(json.dumps(gaps, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fairfedsim",
        description="Federated-learning simulator with fairness-aware clustering",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="materialize synthetic clients as CSV files")
    p.add_argument("--spec", required=True, help="TOML with seed and [[clients]] specs")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("run", help="run one experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("compare", help="run several configs on one dataset")
    p.add_argument("--configs", required=True, nargs="+")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("analyze", help="two-cluster threshold analysis")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_analyze)

    p = sub.add_parser("metrics", help="fairness gaps of a (prediction,label,group) CSV")
    p.add_argument("--input", required=True)
    p.set_defaults(func=_cmd_metrics)

    return parser


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except (ValidationError, OSError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
