"""Datasets: synthetic Gaussian clients, CSV ingestion, partitioning, splits.

A sample is (features, label, group) with binary label {0, 1} and binary
protected group {a, b}. Client data is stored column-wise in numpy arrays
and is immutable after construction; all generators and partitioners are
pure functions of (inputs, seed).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import CapacityError, ParseError, ValidationError
from .fairness import GROUP_A, GROUP_B, GROUP_NAMES
from .seeds import TAG_DATA, TAG_SELECT, make_rng

# Cell order used everywhere a deterministic sweep over (group, label) cells
# is needed: group a first, label 1 first.
CELL_ORDER: Tuple[Tuple[int, int], ...] = (
    (GROUP_A, 1),
    (GROUP_A, 0),
    (GROUP_B, 1),
    (GROUP_B, 0),
)


@dataclass(frozen=True)
class Sample:
    features: np.ndarray  # shape (d,)
    label: int
    group: str  # 'a' or 'b'

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValidationError(f"label must be 0/1, got {self.label}")
        if self.group not in GROUP_NAMES:
            raise ValidationError(f"group must be 'a'/'b', got {self.group}")
        if np.asarray(self.features).ndim != 1 or len(self.features) < 1:
            raise ValidationError("features must be a 1-D vector with d >= 1")


class ClientDataset:
    """One client's labeled, group-tagged samples.

    Arrays are frozen after construction. `labels` are int8 in {0,1} and
    `groups` are int8 codes (0 = a, 1 = b).
    """

    def __init__(self, client_id: int, features, labels, groups):
        feats = np.atleast_2d(np.asarray(features, dtype=np.float64))
        labs = np.asarray(labels, dtype=np.int8).ravel()
        grps = np.asarray(groups, dtype=np.int8).ravel()
        if feats.shape[0] != labs.shape[0] or feats.shape[0] != grps.shape[0]:
            raise ValidationError("features/labels/groups lengths differ")
        if feats.shape[0] < 1:
            raise ValidationError("a client dataset needs n >= 1 samples")
        if feats.shape[1] < 1:
            raise ValidationError("feature dimension must be >= 1")
        if not np.isin(labs, (0, 1)).all():
            raise ValidationError("labels must be 0/1")
        if not np.isin(grps, (GROUP_A, GROUP_B)).all():
            raise ValidationError("group codes must be 0 (a) or 1 (b)")
        for arr in (feats, labs, grps):
            arr.setflags(write=False)
        self.client_id = int(client_id)
        self.features = feats
        self.labels = labs
        self.groups = grps

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def cell_count(self, group: int, label: int) -> int:
        return int(((self.groups == group) & (self.labels == label)).sum())

    def cell_counts(self) -> Dict[Tuple[int, int], int]:
        return {cell: self.cell_count(*cell) for cell in CELL_ORDER}

    @property
    def samples(self) -> Iterator[Sample]:
        for i in range(self.n):
            yield Sample(
                features=self.features[i],
                label=int(self.labels[i]),
                group=GROUP_NAMES[self.groups[i]],
            )

    def subset(self, indices, client_id: Optional[int] = None) -> "ClientDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return ClientDataset(
            self.client_id if client_id is None else client_id,
            self.features[idx],
            self.labels[idx],
            self.groups[idx],
        )

    @staticmethod
    def concat(parts: Sequence["ClientDataset"], client_id: int = 0) -> "ClientDataset":
        if not parts:
            raise ValidationError("nothing to concatenate")
        return ClientDataset(
            client_id,
            np.concatenate([p.features for p in parts]),
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.groups for p in parts]),
        )

    def __repr__(self):
        return f"ClientDataset(id={self.client_id}, n={self.n}, d={self.dim})"


@dataclass(frozen=True)
class GaussianClientSpec:
    """Population of one client (or one cluster of identical clients).

    Per (group g, label y) cell, features are N(mu^y_g, sigma^2). Label
    rates alpha^1_g and group rate r_a determine the cell proportions; the
    complements alpha^0_g = 1 - alpha^1_g and r_b = 1 - r_a are implied.
    Exactly one of `n_total` / `n_per_cell` fixes the sample budget.

    `paired_groups` draws the two groups of a label cell from common
    random numbers (x = mu + sigma * z with the same z stream), a paired
    design that removes between-group sampling noise: clients whose group
    distributions coincide then have exactly zero empirical gaps. Cell
    marginals are unchanged. Requires equal per-group cell counts.
    """

    mu_1_a: float
    mu_0_a: float
    mu_1_b: float
    mu_0_b: float
    sigma: float = 1.0
    alpha_1_a: float = 0.5
    alpha_1_b: float = 0.5
    r_a: float = 0.5
    n_total: Optional[int] = None
    n_per_cell: Optional[int] = None
    dim: int = 1
    paired_groups: bool = False

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValidationError(f"sigma must be > 0, got {self.sigma}")
        for name in ("alpha_1_a", "alpha_1_b", "r_a"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name} must be in [0, 1], got {v}")
        if self.dim < 1:
            raise ValidationError("dim must be >= 1")
        if self.n_total is not None and self.n_per_cell is not None:
            raise ValidationError("set only one of n_total / n_per_cell")

    @property
    def r_b(self) -> float:
        return 1.0 - self.r_a

    def mu(self, group: int, label: int) -> float:
        return {
            (GROUP_A, 1): self.mu_1_a,
            (GROUP_A, 0): self.mu_0_a,
            (GROUP_B, 1): self.mu_1_b,
            (GROUP_B, 0): self.mu_0_b,
        }[(group, label)]

    def alpha(self, group: int, label: int) -> float:
        a1 = self.alpha_1_a if group == GROUP_A else self.alpha_1_b
        return a1 if label == 1 else 1.0 - a1

    def r(self, group: int) -> float:
        return self.r_a if group == GROUP_A else self.r_b

    def cell_fraction(self, group: int, label: int) -> float:
        return self.r(group) * self.alpha(group, label)

    def cell_counts(self) -> Dict[Tuple[int, int], int]:
        """Integer counts per cell under the documented rounding rule.

        Fractional cell targets are floored; the remainder is assigned one
        sample at a time in CELL_ORDER (group a first, label 1 first).
        """
        if self.n_per_cell is not None:
            return {cell: int(self.n_per_cell) for cell in CELL_ORDER}
        if self.n_total is None:
            raise ValidationError("spec has no sample budget (n_total/n_per_cell)")
        counts = {c: int(np.floor(self.n_total * self.cell_fraction(*c))) for c in CELL_ORDER}
        short = self.n_total - sum(counts.values())
        i = 0
        while short > 0:
            counts[CELL_ORDER[i % 4]] += 1
            short -= 1
            i += 1
        return counts

    def to_dict(self) -> dict:
        d = {
            "mu_1_a": self.mu_1_a,
            "mu_0_a": self.mu_0_a,
            "mu_1_b": self.mu_1_b,
            "mu_0_b": self.mu_0_b,
            "sigma": self.sigma,
            "alpha_1_a": self.alpha_1_a,
            "alpha_1_b": self.alpha_1_b,
            "r_a": self.r_a,
            "dim": self.dim,
        }
        if self.n_total is not None:
            d["n_total"] = self.n_total
        if self.n_per_cell is not None:
            d["n_per_cell"] = self.n_per_cell
        if self.paired_groups:
            d["paired_groups"] = True
        return d

    @staticmethod
    def from_dict(d: dict) -> "GaussianClientSpec":
        allowed = {
            "mu_1_a", "mu_0_a", "mu_1_b", "mu_0_b", "sigma",
            "alpha_1_a", "alpha_1_b", "r_a", "n_total", "n_per_cell", "dim",
            "paired_groups",
        }
        unknown = set(d) - allowed
        if unknown:
            raise ValidationError(f"unknown GaussianClientSpec fields: {sorted(unknown)}")
        return GaussianClientSpec(**d)


def generate_gaussian_client(
    spec: GaussianClientSpec, seed: int, client_id: int = 0
) -> ClientDataset:
    """Draw one client's dataset from its Gaussian spec, deterministically.

    Cells are drawn in CELL_ORDER from a generator seeded with
    (seed, TAG_DATA, client_id), so the same (spec, seed, client_id) always
    yields the same dataset. For dim > 1 every coordinate is an independent
    N(mu, sigma^2) draw around the same cell mean.
    """
    counts = spec.cell_counts()
    if spec.paired_groups:
        for y in (0, 1):
            if counts[(GROUP_A, y)] != counts[(GROUP_B, y)]:
                raise ValidationError(
                    "paired_groups needs equal per-group counts within each label"
                )
    rng = make_rng(seed, TAG_DATA, client_id)
    feats, labs, grps = [], [], []
    shared: Dict[int, np.ndarray] = {}
    for (g, y) in CELL_ORDER:
        n = counts[(g, y)]
        if n == 0:
            continue
        if spec.paired_groups:
            if y not in shared:
                shared[y] = rng.standard_normal(size=(n, spec.dim))
            cell = spec.mu(g, y) + spec.sigma * shared[y]
        else:
            cell = rng.normal(spec.mu(g, y), spec.sigma, size=(n, spec.dim))
        feats.append(cell)
        labs.append(np.full(n, y, dtype=np.int8))
        grps.append(np.full(n, g, dtype=np.int8))
    if not feats:
        raise ValidationError("spec yields an empty dataset")
    return ClientDataset(
        client_id, np.concatenate(feats), np.concatenate(labs), np.concatenate(grps)
    )


def generate_clients(
    specs: Sequence[GaussianClientSpec], seed: int, first_id: int = 1
) -> List[ClientDataset]:
    """One dataset per spec; client ids run first_id, first_id+1, ..."""
    return [
        generate_gaussian_client(spec, seed, client_id=first_id + i)
        for i, spec in enumerate(specs)
    ]


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CsvSchema:
    """How to interpret a CSV file's columns.

    Feature columns are every column not named here. Numeric feature
    columns are z-scored over the whole file; non-numeric ones are one-hot
    encoded with lexicographically ordered levels (one 0/1 column per
    level, left unscaled).
    """

    label_column: str
    group_column: str
    client_column: Optional[str] = None
    group_value_map: Optional[Dict[str, str]] = None
    standardize: bool = True


def _parse_label(value: str, row_num: int) -> int:
    try:
        f = float(value)
    except ValueError:
        raise ParseError(f"row {row_num}: label {value!r} is not numeric") from None
    if f not in (0.0, 1.0):
        raise ParseError(f"row {row_num}: label {value!r} is not 0/1")
    return int(f)


def _parse_group(value: str, mapping: Optional[Dict[str, str]], row_num: int) -> int:
    name = mapping.get(value) if mapping else value
    if name not in GROUP_NAMES:
        raise ParseError(
            f"row {row_num}: group value {value!r} does not map to 'a'/'b'"
        )
    return GROUP_A if name == "a" else GROUP_B


def _is_float(value: str) -> bool:
    try:
        float(value)
        return True
    except ValueError:
        return False


def load_csv_dataset(path, schema: CsvSchema) -> List[ClientDataset]:
    """Read a header-ed CSV into one ClientDataset per client key.

    Without a client column the whole file becomes a single client with
    id 0; otherwise clients are keyed by the column's distinct values
    (integer values keep their value as id, anything else is numbered by
    sorted order of the key).
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file, expected a header row") from None
        rows = list(reader)

    for col in (schema.label_column, schema.group_column):
        if col not in header:
            raise ParseError(f"{path}: missing required column {col!r}")
    if schema.client_column is not None and schema.client_column not in header:
        raise ParseError(f"{path}: missing client column {schema.client_column!r}")

    reserved = {schema.label_column, schema.group_column}
    if schema.client_column:
        reserved.add(schema.client_column)
    feature_cols = [c for c in header if c not in reserved]
    col_idx = {c: header.index(c) for c in header}

    width = len(header)
    for i, row in enumerate(rows):
        if len(row) != width:
            raise ParseError(
                f"{path}: row {i + 2} has {len(row)} fields, expected {width}"
            )
    if not rows:
        raise ParseError(f"{path}: no data rows")

    labels = np.array(
        [_parse_label(r[col_idx[schema.label_column]], i + 2) for i, r in enumerate(rows)],
        dtype=np.int8,
    )
    groups = np.array(
        [
            _parse_group(r[col_idx[schema.group_column]], schema.group_value_map, i + 2)
            for i, r in enumerate(rows)
        ],
        dtype=np.int8,
    )

    # Column typing: numeric iff every value parses as float.
    blocks: List[np.ndarray] = []
    for c in feature_cols:
        raw = [r[col_idx[c]] for r in rows]
        if all(_is_float(v) for v in raw):
            col = np.array([float(v) for v in raw], dtype=np.float64)
            if schema.standardize:
                std = col.std()
                col = (col - col.mean()) / std if std > 0 else col - col.mean()
            blocks.append(col[:, None])
        else:
            levels = sorted(set(raw))
            onehot = np.zeros((len(raw), len(levels)))
            for j, lv in enumerate(levels):
                onehot[np.array(raw, dtype=object) == lv, j] = 1.0
            blocks.append(onehot)
    if not blocks:
        raise ParseError(f"{path}: no feature columns left after schema columns")
    features = np.concatenate(blocks, axis=1)

    if schema.client_column is None:
        return [ClientDataset(0, features, labels, groups)]

    keys = [r[col_idx[schema.client_column]] for r in rows]
    uniq = sorted(set(keys))
    out = []
    for rank, key in enumerate(uniq):
        idx = [i for i, k in enumerate(keys) if k == key]
        cid = int(key) if key.lstrip("-").isdigit() else rank
        out.append(ClientDataset(cid, features[idx], labels[idx], groups[idx]))
    return out


# ---------------------------------------------------------------------------
# Partitioning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RandomEven:
    """Shuffle and split into k near-equal clients."""

    k: int


QuotaKey = Union[str, int, Tuple[str, int]]


@dataclass(frozen=True)
class ImbalanceRecipe:
    """Exact per-client quotas over groups, labels, or (group, label) cells.

    Each entry is a dict whose keys are 'a'/'b' (group totals), 0/1 (label
    totals), or ('a', 1)-style cells, mapping to sample counts -- or None,
    marking a client that shares whatever remains. Leftover samples are
    spread as evenly as possible over the None clients; if quotas leave
    samples unassigned and no client takes the remainder, that is an error
    because partitions must be exhaustive.
    """

    quotas: Tuple[Optional[Dict[QuotaKey, int]], ...]

    def __init__(self, quotas: Sequence[Optional[Dict[QuotaKey, int]]]):
        object.__setattr__(self, "quotas", tuple(quotas))


Strategy = Union[RandomEven, ImbalanceRecipe]


def _quota_mask(dataset: ClientDataset, key: QuotaKey) -> np.ndarray:
    if isinstance(key, tuple):
        gname, y = key
        g = GROUP_A if gname == "a" else GROUP_B if gname == "b" else None
        if g is None or y not in (0, 1):
            raise ValidationError(f"bad quota cell {key!r}")
        return (dataset.groups == g) & (dataset.labels == y)
    if key in ("a", "b"):
        return dataset.groups == (GROUP_A if key == "a" else GROUP_B)
    if key in (0, 1):
        return dataset.labels == key
    raise ValidationError(f"bad quota key {key!r}")


def partition_clients(
    dataset: ClientDataset, strategy: Strategy, seed: int
) -> List[ClientDataset]:
    """Split one pool into clients; exhaustive, disjoint, seed-deterministic."""
    rng = make_rng(seed, TAG_SELECT)
    if isinstance(strategy, RandomEven):
        if strategy.k < 1:
            raise ValidationError("random_even needs k >= 1")
        if strategy.k > dataset.n:
            raise CapacityError(f"cannot split {dataset.n} samples into {strategy.k} clients")
        perm = rng.permutation(dataset.n)
        chunks = np.array_split(perm, strategy.k)
        return [dataset.subset(c, client_id=i) for i, c in enumerate(chunks)]

    if not isinstance(strategy, ImbalanceRecipe):
        raise ValidationError(f"unknown partition strategy {strategy!r}")

    remaining = np.ones(dataset.n, dtype=bool)
    assigned: List[Optional[np.ndarray]] = [None] * len(strategy.quotas)
    for ci, quota in enumerate(strategy.quotas):
        if quota is None:
            continue
        picks: List[np.ndarray] = []
        for key, want in quota.items():
            if want < 0:
                raise ValidationError(f"quota counts must be >= 0, got {want}")
            pool = np.flatnonzero(_quota_mask(dataset, key) & remaining)
            if len(pool) < want:
                raise CapacityError(
                    f"client {ci}: quota {key!r}={want} exceeds the "
                    f"{len(pool)} available samples"
                )
            chosen = rng.choice(pool, size=want, replace=False) if want else np.array([], dtype=np.int64)
            remaining[chosen] = False
            picks.append(chosen)
        assigned[ci] = np.concatenate(picks) if picks else np.array([], dtype=np.int64)

    leftovers = np.flatnonzero(remaining)
    sharers = [i for i, q in enumerate(strategy.quotas) if q is None]
    if len(leftovers) and not sharers:
        raise CapacityError(
            f"{len(leftovers)} samples left unassigned; quotas must exhaust the "
            "pool or a client must take the remainder (quota None)"
        )
    if sharers:
        perm = rng.permutation(leftovers)
        for share, ci in zip(np.array_split(perm, len(sharers)), sharers):
            assigned[ci] = share

    out = []
    for ci, idx in enumerate(assigned):
        if idx is None or len(idx) == 0:
            raise CapacityError(f"client {ci} ended up empty")
        out.append(dataset.subset(np.sort(idx), client_id=ci))
    return out


def train_eval_split(
    client: ClientDataset, eval_fraction: float, seed: int
) -> Tuple[ClientDataset, ClientDataset]:
    """Stratified train/eval split by (group, label) cell.

    Per cell, floor(eval_fraction * n_cell) samples go to eval, so a
    1-sample cell always lands in train. When the two groups of a label
    have equal cell sizes the same within-cell positions are selected for
    both (each cell's subset is still uniformly random; this keeps paired
    group draws paired). Deterministic given seed.
    """
    if not 0.0 < eval_fraction < 1.0:
        raise ValidationError(f"eval_fraction must be in (0, 1), got {eval_fraction}")
    rng = make_rng(seed, TAG_DATA, client.client_id, 1)
    eval_idx: List[np.ndarray] = []
    positions_by_label: Dict[int, np.ndarray] = {}
    for y in (1, 0):
        cells = {
            g: np.flatnonzero((client.groups == g) & (client.labels == y))
            for g in (GROUP_A, GROUP_B)
        }
        sizes = {g: len(cells[g]) for g in cells}
        if sizes[GROUP_A] == sizes[GROUP_B] and sizes[GROUP_A] > 0:
            n_eval = int(np.floor(eval_fraction * sizes[GROUP_A]))
            if n_eval:
                pos = rng.choice(sizes[GROUP_A], size=n_eval, replace=False)
                eval_idx += [cells[GROUP_A][pos], cells[GROUP_B][pos]]
        else:
            for g in (GROUP_A, GROUP_B):
                n_eval = int(np.floor(eval_fraction * sizes[g]))
                if n_eval:
                    eval_idx.append(rng.choice(cells[g], size=n_eval, replace=False))
    ev = np.sort(np.concatenate(eval_idx)) if eval_idx else np.array([], dtype=np.int64)
    if len(ev) == 0 or len(ev) == client.n:
        raise ValidationError(
            f"client {client.client_id}: eval_fraction {eval_fraction} leaves an "
            f"empty split for n={client.n}"
        )
    tr = np.setdiff1d(np.arange(client.n), ev)
    return client.subset(tr), client.subset(ev)
