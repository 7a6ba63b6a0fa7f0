"""Declarative experiment configs, seeded multi-run execution, reporting.

A config is a TOML file (see README for the schema) naming a dataset
source, an algorithm with its hyperparameters, a run count, and a base
seed. Every number in the resulting report is a pure function of
(config, base_seed): run r derives its own seed, draws fresh synthetic
data (or re-splits CSV data), fits the algorithm, and evaluates each
client's deployed model on that client's held-out split.

Fairness gaps that are undefined for a client (an empty group or label
cell in its eval split) stay undefined: they are reported as null and
never enter the aggregate means.
"""

from __future__ import annotations

import csv
import json
import sys
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .data import (
    ClientDataset,
    CsvSchema,
    GaussianClientSpec,
    ImbalanceRecipe,
    RandomEven,
    generate_clients,
    load_csv_dataset,
    partition_clients,
    train_eval_split,
)
from .errors import ConfigError, ValidationError
from .estimators import ALGORITHMS
from .fairness import all_gaps
from .models import misclassification_rate, predict_labels
from .seeds import derive_seed

Partition = Tuple[Tuple[int, ...], ...]

_ALGORITHM_PARAMS = {
    "standalone": {"rounds"},
    "fedavg": {"rounds"},
    "fedprox": {"rounds", "mu"},
    "finetune": {"rounds", "extra_steps", "finetune_learning_rate"},
    "fair_fca": {
        "n_clusters", "gamma", "metric", "max_rounds", "stable_rounds",
        "cluster_weighting", "init_epochs",
    },
    "fair_flhc": {
        "warmup_rounds", "cluster_rounds", "gamma", "metric", "linkage",
        "n_clusters", "distance_threshold",
    },
}
_CLUSTERED = {"fair_fca", "fair_flhc"}


@dataclass(frozen=True)
class DatasetSource:
    kind: str  # 'synthetic' | 'csv'
    specs: Tuple[GaussianClientSpec, ...] = ()
    csv_path: Optional[str] = None
    csv_schema: Optional[CsvSchema] = None
    partition: Optional[dict] = None  # for csv: {'strategy': 'random_even', 'k': n}

    def to_dict(self) -> dict:
        if self.kind == "synthetic":
            return {"kind": "synthetic", "clients": [s.to_dict() for s in self.specs]}
        d = {
            "kind": "csv",
            "path": self.csv_path,
            "label_column": self.csv_schema.label_column,
            "group_column": self.csv_schema.group_column,
        }
        if self.csv_schema.client_column:
            d["client_column"] = self.csv_schema.client_column
        if self.csv_schema.group_value_map:
            d["group_value_map"] = dict(self.csv_schema.group_value_map)
        if self.partition:
            d["partition"] = dict(self.partition)
        return d


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: DatasetSource
    algorithm: str
    algorithm_params: Dict[str, object]
    train: Dict[str, object]
    runs: int = 1
    base_seed: int = 0
    eval_fraction: float = 0.2
    name: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "dataset": self.dataset.to_dict(),
            "algorithm": dict({"name": self.algorithm}, **self.algorithm_params),
            "train": dict(self.train),
            "runs": self.runs,
            "base_seed": self.base_seed,
            "eval_fraction": self.eval_fraction,
        }


def _expect(mapping: dict, key: str, path: str, required=True, kind=None):
    if key not in mapping:
        if required:
            raise ConfigError(f"{path}.{key}: missing required field")
        return None
    value = mapping[key]
    if kind is not None and not isinstance(value, kind):
        raise ConfigError(
            f"{path}.{key}: expected {getattr(kind, '__name__', kind)}, "
            f"got {type(value).__name__}"
        )
    return value


def parse_config(raw: dict, name: Optional[str] = None) -> ExperimentConfig:
    """Validate a parsed TOML tree; errors carry the offending field path."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a table")
    unknown = set(raw) - {"dataset", "algorithm", "train", "runs", "base_seed",
                          "eval_fraction", "name"}
    if unknown:
        raise ConfigError(f"unknown top-level fields: {sorted(unknown)}")

    runs = raw.get("runs", 1)
    if not isinstance(runs, int) or runs < 1:
        raise ConfigError("runs: must be an integer >= 1")
    base_seed = raw.get("base_seed", 0)
    if not isinstance(base_seed, int) or base_seed < 0:
        raise ConfigError("base_seed: must be a non-negative integer")
    eval_fraction = raw.get("eval_fraction", 0.2)
    if not isinstance(eval_fraction, (int, float)) or not 0 < eval_fraction < 1:
        raise ConfigError("eval_fraction: must be in (0, 1)")

    ds_raw = _expect(raw, "dataset", "", kind=dict)
    kind = _expect(ds_raw, "kind", "dataset", kind=str)
    if kind == "synthetic":
        clients_raw = _expect(ds_raw, "clients", "dataset", kind=list)
        if not clients_raw:
            raise ConfigError("dataset.clients: need at least one client spec")
        specs = []
        for i, spec_raw in enumerate(clients_raw):
            try:
                specs.append(GaussianClientSpec.from_dict(spec_raw))
            except (ValidationError, TypeError) as err:
                raise ConfigError(f"dataset.clients[{i}]: {err}") from err
        dataset = DatasetSource(kind="synthetic", specs=tuple(specs))
    elif kind == "csv":
        path = _expect(ds_raw, "path", "dataset", kind=str)
        schema = CsvSchema(
            label_column=_expect(ds_raw, "label_column", "dataset", kind=str),
            group_column=_expect(ds_raw, "group_column", "dataset", kind=str),
            client_column=_expect(ds_raw, "client_column", "dataset", required=False, kind=str),
            group_value_map=_expect(ds_raw, "group_value_map", "dataset", required=False, kind=dict),
        )
        partition = _expect(ds_raw, "partition", "dataset", required=False, kind=dict)
        if partition is not None:
            strategy = _expect(partition, "strategy", "dataset.partition", kind=str)
            if strategy == "random_even":
                _expect(partition, "k", "dataset.partition", kind=int)
            elif strategy != "imbalance_recipe":
                raise ConfigError(
                    f"dataset.partition.strategy: unknown strategy {strategy!r}"
                )
        dataset = DatasetSource(kind="csv", csv_path=path, csv_schema=schema,
                                partition=partition)
    else:
        raise ConfigError(f"dataset.kind: expected 'synthetic' or 'csv', got {kind!r}")

    algo_raw = _expect(raw, "algorithm", "", kind=dict)
    algo_name = _expect(algo_raw, "name", "algorithm", kind=str)
    if algo_name not in ALGORITHMS:
        raise ConfigError(
            f"algorithm.name: unknown algorithm {algo_name!r}; "
            f"expected one of {sorted(ALGORITHMS)}"
        )
    params = {k: v for k, v in algo_raw.items() if k != "name"}
    bad = set(params) - _ALGORITHM_PARAMS[algo_name]
    if bad:
        raise ConfigError(
            f"algorithm.{sorted(bad)[0]}: not a parameter of {algo_name!r}"
        )

    train_raw = raw.get("train", {})
    if not isinstance(train_raw, dict):
        raise ConfigError("train: must be a table")
    bad = set(train_raw) - {"epochs", "learning_rate", "batch_size"}
    if bad:
        raise ConfigError(f"train.{sorted(bad)[0]}: unknown training field")

    return ExperimentConfig(
        dataset=dataset,
        algorithm=algo_name,
        algorithm_params=params,
        train=dict(train_raw),
        runs=runs,
        base_seed=base_seed,
        eval_fraction=float(eval_fraction),
        name=raw.get("name", name),
    )


def load_config(path: str) -> ExperimentConfig:
    if sys.version_info >= (3, 11):
        import tomllib
    else:
        import tomli as tomllib
    with open(path, "rb") as fh:
        try:
            raw = tomllib.load(fh)
        except tomllib.TOMLDecodeError as err:
            raise ConfigError(f"{path}: {err}") from err
    return parse_config(raw, name=str(path))


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ClientResult:
    run: int
    client_id: int
    n_train: int
    n_eval: int
    accuracy: float
    sp: Optional[float]
    eqop: Optional[float]
    eo: Optional[float]
    cluster: Optional[int] = None


@dataclass(frozen=True)
class ResultsReport:
    config: dict
    per_client: Tuple[ClientResult, ...]
    aggregates: Dict[str, dict]
    partitions: Optional[dict] = None
    schema_version: int = 1
    software_version: str = __version__

    def to_dict(self) -> dict:
        d = {
            "schema_version": self.schema_version,
            "software_version": self.software_version,
            "config": self.config,
            "per_client": [vars(r).copy() for r in self.per_client],
            "aggregates": self.aggregates,
        }
        if self.partitions is not None:
            d["partitions"] = self.partitions
        return d


def _build_clients(config: ExperimentConfig, run: int) -> List[ClientDataset]:
    ds = config.dataset
    run_seed = derive_seed(config.base_seed, run)
    if ds.kind == "synthetic":
        return generate_clients(ds.specs, seed=run_seed, first_id=1)
    clients = load_csv_dataset(ds.csv_path, ds.csv_schema)
    if ds.partition is not None:
        if len(clients) != 1:
            raise ConfigError(
                "dataset.partition: partitioning needs a single-client pool "
                "(no client_column)"
            )
        if ds.partition["strategy"] == "random_even":
            strategy = RandomEven(ds.partition["k"])
        else:
            strategy = ImbalanceRecipe(_parse_quotas(ds.partition))
        clients = partition_clients(clients[0], strategy, seed=run_seed)
    return clients


_QUOTA_KEYS = {
    "a": "a", "b": "b",
    "label_1": 1, "label_0": 0,
    "a_1": ("a", 1), "a_0": ("a", 0), "b_1": ("b", 1), "b_0": ("b", 0),
}


def _parse_quotas(partition: dict):
    quotas_raw = partition.get("quotas")
    if not isinstance(quotas_raw, list) or not quotas_raw:
        raise ConfigError("dataset.partition.quotas: need a list of quota tables")
    quotas = []
    for i, q in enumerate(quotas_raw):
        if q.get("rest"):
            quotas.append(None)
            continue
        entry = {}
        for key, value in q.items():
            if key not in _QUOTA_KEYS:
                raise ConfigError(
                    f"dataset.partition.quotas[{i}].{key}: unknown quota key"
                )
            entry[_QUOTA_KEYS[key]] = value
        quotas.append(entry)
    return quotas


def canonical_partition(partition) -> Partition:
    return tuple(sorted(tuple(sorted(part)) for part in partition if len(part)))


def modal_partition(partitions: Sequence[Partition]) -> Tuple[Partition, int]:
    """Most frequent partition; count ties resolved lexicographically."""
    counts: Dict[Partition, int] = {}
    for p in partitions:
        counts[p] = counts.get(p, 0) + 1
    best = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[0]
    return best[0], best[1]


def run_experiment(config: ExperimentConfig) -> ResultsReport:
    """Execute all seeded runs and assemble the report."""
    rows: List[ClientResult] = []
    run_partitions: List[Partition] = []
    for run in range(config.runs):
        try:
            clients = _build_clients(config, run)
            splits = {
                c.client_id: train_eval_split(
                    c, config.eval_fraction, seed=derive_seed(config.base_seed, run)
                )
                for c in clients
            }
            train_clients = [splits[c.client_id][0] for c in clients]

            estimator_cls = ALGORITHMS[config.algorithm]
            estimator = estimator_cls(
                **config.algorithm_params,
                **config.train,
                base_seed=derive_seed(config.base_seed, run, 1),
            )
            estimator.fit(train_clients)
        except (ValidationError, RuntimeError) as err:
            raise type(err)(f"run {run}: {err}") from err

        for c in clients:
            eval_split = splits[c.client_id][1]
            model = estimator.model_for(c.client_id)
            preds = predict_labels(model, eval_split.features)
            gaps = all_gaps(preds, eval_split.labels, eval_split.groups)
            rows.append(
                ClientResult(
                    run=run,
                    client_id=c.client_id,
                    n_train=splits[c.client_id][0].n,
                    n_eval=eval_split.n,
                    accuracy=1.0 - misclassification_rate(model, eval_split),
                    sp=gaps["sp"],
                    eqop=gaps["eqop"],
                    eo=gaps["eo"],
                    cluster=getattr(estimator, "assignment_", {}).get(c.client_id)
                    if config.algorithm in _CLUSTERED
                    else None,
                )
            )
        if config.algorithm in _CLUSTERED:
            run_partitions.append(canonical_partition(estimator.partition_))

    partitions = None
    if run_partitions:
        modal, count = modal_partition(run_partitions)
        partitions = {
            "per_run": [[list(part) for part in p] for p in run_partitions],
            "modal": [list(part) for part in modal],
            "modal_count": count,
        }
    return ResultsReport(
        config=config.to_dict(),
        per_client=tuple(rows),
        aggregates=compute_aggregates(rows),
        partitions=partitions,
    )


def compute_aggregates(rows: Sequence[ClientResult]) -> Dict[str, dict]:
    """Pooled mean/std over clients and runs; undefined gaps are excluded."""
    out: Dict[str, dict] = {}
    for key in ("accuracy", "sp", "eqop", "eo"):
        values = [getattr(r, key) for r in rows]
        defined = [v for v in values if v is not None]
        entry = {
            "mean": float(np.mean(defined)) if defined else None,
            "std": float(np.std(defined)) if defined else None,
            "count": len(defined),
        }
        if key != "accuracy":
            entry["undefined"] = len(values) - len(defined)
        out[key] = entry
    return out


def per_run_means(report: ResultsReport, key: str) -> List[float]:
    """Mean of one metric per run, skipping undefined entries."""
    runs = sorted({r.run for r in report.per_client})
    means = []
    for run in runs:
        vals = [
            getattr(r, key)
            for r in report.per_client
            if r.run == run and getattr(r, key) is not None
        ]
        means.append(float(np.mean(vals)) if vals else float("nan"))
    return means


# ---------------------------------------------------------------------------
# Emission and comparison
# ---------------------------------------------------------------------------

def emit_report(report: ResultsReport, path: str, format: str = "json") -> None:
    """Write a report as versioned JSON or flattened per-client CSV."""
    if format == "json":
        with open(path, "w") as fh:
            json.dump(report.to_dict(), fh, indent=2)
            fh.write("\n")
    elif format == "csv":
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["run", "client_id", "n_train", "n_eval", "accuracy",
                 "sp", "eqop", "eo", "cluster"]
            )
            for r in report.per_client:
                writer.writerow(
                    [r.run, r.client_id, r.n_train, r.n_eval, f"{r.accuracy:.10g}"]
                    + ["" if v is None else f"{v:.10g}" for v in (r.sp, r.eqop, r.eo)]
                    + ["" if r.cluster is None else r.cluster]
                )
    else:
        raise ValidationError(f"unknown report format {format!r}")


def compare_algorithms(
    configs: Sequence[ExperimentConfig],
) -> List[dict]:
    """Run several configs on one dataset; one summary row per algorithm."""
    if not configs:
        raise ValidationError("need at least one config")
    first = configs[0]
    for c in configs[1:]:
        if c.dataset.to_dict() != first.dataset.to_dict():
            raise ValidationError("compare requires a shared dataset source")
        if c.base_seed != first.base_seed:
            raise ValidationError("compare requires a shared base_seed")
    rows = []
    for c in configs:
        report = run_experiment(c)
        agg = report.aggregates
        rows.append(
            {
                "algorithm": c.name or c.algorithm,
                "accuracy_mean": agg["accuracy"]["mean"],
                "sp_mean": agg["sp"]["mean"],
                "eqop_mean": agg["eqop"]["mean"],
                "eo_mean": agg["eo"]["mean"],
            }
        )
    return rows


def emit_comparison(rows: Sequence[dict], path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["algorithm", "accuracy_mean", "sp_mean", "eqop_mean", "eo_mean"]
        )
        writer.writeheader()
        for row in rows:
            writer.writerow(
                {k: ("" if v is None else v) for k, v in row.items()}
            )
