"""Fairness-aware clustered federated learning.

Two families:

* Iterative cluster assignment (`run_fair_fca`): every round each client
  joins the cluster whose model minimizes a mixed score
  gamma * misclassification + (1 - gamma) * fairness gap, then trains
  locally, and cluster models are updated as weighted averages of their
  members. gamma = 1 reduces to loss-only iterative clustering.

* One-shot hierarchical clustering (`run_fair_flhc`): a federated warm
  start, a local personalization pass, agglomerative clustering of a mixed
  dissimilarity (normalized model distances blended with worst-case
  cross-client fairness), then independent per-cluster federated training.
  gamma = 1 reduces to distance-only clustering.

Both scores live in [0, 1]: misclassification rate is used for the loss
term (not cross-entropy) so that gamma interpolates commensurable
quantities, and model distances are min-max normalized before mixing.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import ClientDataset
from .errors import ValidationError
from .fairness import FairnessMetric, MetricLike, coerce_metric, gap_from_predictions
from .federation import (
    FederationConfig,
    RoundLog,
    _check_clients,
    _sorted_clients,
    aggregate_weighted,
    client_update,
    fedavg_round,
    model_hash,
    run_fedavg,
)
from .models import (
    Architecture,
    ModelParams,
    TrainConfig,
    init_params,
    misclassification_rate,
    predict_labels,
)
from .seeds import TAG_SELECT, init_seed, make_rng


@dataclass(frozen=True)
class AssignmentScore:
    """Mixed accuracy/fairness score of one (client, cluster model) pair."""

    loss_term: float
    fairness_term: Optional[float]
    mixed: float
    fairness_undefined: bool = False


@dataclass(frozen=True)
class ClusterState:
    k: int
    cluster_models: Tuple[ModelParams, ...]
    assignment: Dict[int, int]  # client_id -> cluster index
    round_index: int

    def members(self, cluster: int) -> List[int]:
        return sorted(i for i, c in self.assignment.items() if c == cluster)

    def partition(self) -> Tuple[Tuple[int, ...], ...]:
        groups = [tuple(self.members(k)) for k in range(self.k)]
        return tuple(sorted(g for g in groups if g))


def assignment_score(
    client: ClientDataset,
    cluster_model: ModelParams,
    gamma: float,
    metric: MetricLike,
) -> AssignmentScore:
    """Score one candidate cluster model on one client's data.

    The fairness term is the empirical gap of the model's hard predictions
    on the client's samples. When that gap is undefined (empty group or
    label cell) the score falls back to the loss term alone and is flagged.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValidationError(f"gamma must be in [0, 1], got {gamma}")
    metric = coerce_metric(metric)
    if client.n < 1:
        raise ValidationError("assignment_score needs non-empty client data")
    loss_term = misclassification_rate(cluster_model, client)
    preds = predict_labels(cluster_model, client.features)
    fair = gap_from_predictions(metric, preds, client.labels, client.groups)
    if fair is None:
        return AssignmentScore(loss_term, None, loss_term, fairness_undefined=True)
    return AssignmentScore(loss_term, fair, gamma * loss_term + (1.0 - gamma) * fair)


def assign_clusters(
    clients: Sequence[ClientDataset],
    cluster_models: Sequence[ModelParams],
    gamma: float,
    metric: MetricLike,
) -> Dict[int, int]:
    """Argmin of the mixed score per client; ties go to the lowest index."""
    if not cluster_models:
        raise ValidationError("need at least one cluster model")
    out: Dict[int, int] = {}
    for c in clients:
        scores = [assignment_score(c, m, gamma, metric).mixed for m in cluster_models]
        best = 0
        for k, s in enumerate(scores):
            if s < scores[best]:
                best = k
        out[c.client_id] = best
    return out


@dataclass(frozen=True)
class FCAConfig:
    n_clusters: int
    gamma: float
    metric: MetricLike = FairnessMetric.SP
    train: TrainConfig = field(default_factory=TrainConfig)
    base_seed: int = 0
    max_rounds: int = 100
    stable_rounds: Optional[int] = 3   # stop after this many unchanged assignments
    cluster_weighting: str = "cluster"  # 'cluster' | 'global' update denominator
    init_epochs: Optional[int] = None   # epochs for the per-cluster warm start

    def __post_init__(self):
        if self.n_clusters < 1:
            raise ValidationError("n_clusters must be >= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValidationError("gamma must be in [0, 1]")
        if self.max_rounds < 1:
            raise ValidationError("max_rounds must be >= 1")
        if self.stable_rounds is not None and self.stable_rounds < 1:
            raise ValidationError("stable_rounds must be >= 1 or None")
        if self.cluster_weighting not in ("cluster", "global"):
            raise ValidationError("cluster_weighting must be 'cluster' or 'global'")


@dataclass(frozen=True)
class FCARoundRecord:
    round_index: int
    assignment: Dict[int, int]
    changed: bool
    cluster_hashes: Tuple[str, ...]


def _init_cluster_models(
    clients: Sequence[ClientDataset], cfg: FCAConfig
) -> List[ModelParams]:
    """Warm-start each cluster on one randomly chosen distinct client."""
    dim = _check_clients(clients)
    base = init_params(Architecture("linear", dim), init_seed(cfg.base_seed))
    rng = make_rng(cfg.base_seed, TAG_SELECT, 1)
    picks = rng.permutation(len(clients))[: cfg.n_clusters]
    train = cfg.train if cfg.init_epochs is None else replace(cfg.train, epochs=cfg.init_epochs)
    models = []
    for k, ci in enumerate(picks):
        client = clients[ci]
        models.append(
            client_update(client, base, train, cfg.base_seed, 0)
        )
    return models


def _update_cluster_models(
    cluster_models: Sequence[ModelParams],
    assignment: Dict[int, int],
    local_models: Dict[int, ModelParams],
    clients_by_id: Dict[int, ClientDataset],
    weighting: str,
) -> List[ModelParams]:
    """Weighted-average update per cluster; empty clusters keep their model.

    'cluster' weighting normalizes member weights n_i over the cluster
    (a proper convex combination, so a single member replaces the model);
    'global' normalizes over all clients, which only moves the cluster
    model part of the way toward its members.
    """
    total_n = sum(c.n for c in clients_by_id.values())
    out: List[ModelParams] = []
    for k, current in enumerate(cluster_models):
        member_ids = sorted(i for i, ck in assignment.items() if ck == k)
        if not member_ids:
            out.append(current)
            continue
        members = [local_models[i] for i in member_ids]
        weights = [clients_by_id[i].n for i in member_ids]
        if weighting == "cluster":
            out.append(aggregate_weighted(members, weights))
        else:
            vec = current.params.copy()
            for mid, m in zip(member_ids, members):
                w = clients_by_id[mid].n / total_n
                vec = vec - w * (current.params - m.params)
            out.append(current.with_params(vec))
    return out


def run_fair_fca(
    clients: Sequence[ClientDataset],
    cfg: FCAConfig,
    init_models: Optional[Sequence[ModelParams]] = None,
) -> Tuple[ClusterState, Dict[int, ModelParams], List[FCARoundRecord]]:
    """Iterative fairness-aware clustering (loss-only at gamma = 1).

    Loop per round: assign clusters by mixed score, locally train each
    client from its cluster's model, update cluster models from members.
    Stops when assignments are unchanged for `stable_rounds` consecutive
    rounds, or after `max_rounds`.
    """
    _check_clients(clients)
    if cfg.n_clusters > len(clients):
        raise ValidationError(
            f"n_clusters {cfg.n_clusters} exceeds the {len(clients)} clients"
        )
    ordered = _sorted_clients(clients)
    by_id = {c.client_id: c for c in ordered}
    if init_models is not None:
        if len(init_models) != cfg.n_clusters:
            raise ValidationError("init_models must supply one model per cluster")
        cluster_models = list(init_models)
    else:
        cluster_models = _init_cluster_models(ordered, cfg)

    local_models: Dict[int, ModelParams] = {}
    log: List[FCARoundRecord] = []
    assignment: Dict[int, int] = {}
    unchanged = 0
    t = 0
    for t in range(1, cfg.max_rounds + 1):
        new_assignment = assign_clusters(ordered, cluster_models, cfg.gamma, cfg.metric)
        changed = new_assignment != assignment
        assignment = new_assignment
        for c in ordered:
            start = cluster_models[assignment[c.client_id]]
            local_models[c.client_id] = client_update(
                c, start, cfg.train, cfg.base_seed, t
            )
        cluster_models = _update_cluster_models(
            cluster_models, assignment, local_models, by_id, cfg.cluster_weighting
        )
        log.append(
            FCARoundRecord(
                t, dict(assignment), changed, tuple(model_hash(m) for m in cluster_models)
            )
        )
        unchanged = 0 if changed else unchanged + 1
        if cfg.stable_rounds is not None and unchanged >= cfg.stable_rounds:
            break

    state = ClusterState(cfg.n_clusters, tuple(cluster_models), dict(assignment), t)
    return state, local_models, log


# ---------------------------------------------------------------------------
# Hierarchical clustering on a mixed dissimilarity
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MixedDissimilarity:
    """gamma * normalized model distances + (1 - gamma) * cross fairness."""

    matrix: np.ndarray
    distance_component: np.ndarray   # min-max normalized, zero diagonal
    fairness_component: np.ndarray   # worst-case pairwise gaps
    client_ids: Tuple[int, ...]
    undefined_pairs: Tuple[Tuple[int, int], ...] = ()


def pairwise_mixed_matrix(
    clients: Sequence[ClientDataset],
    models: Dict[int, ModelParams],
    gamma: float,
    metric: MetricLike,
) -> MixedDissimilarity:
    """Blend normalized parameter distances with worst-case cross gaps.

    Distances are Euclidean between personalized model parameters, min-max
    normalized over off-diagonal pairs to [0, 1] (all-equal distances give
    the zero matrix). The fairness entry for (i, j) is the larger of the
    gap of model j on client i's data and the gap of model i on client j's
    data; an undefined side falls back to the defined one, and fully
    undefined pairs score 0 and are reported.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValidationError("gamma must be in [0, 1]")
    metric = coerce_metric(metric)
    ordered = _sorted_clients(clients)
    ids = [c.client_id for c in ordered]
    missing = [i for i in ids if i not in models]
    if missing:
        raise ValidationError(f"no personalized model for clients {missing}")
    arch = models[ids[0]].architecture
    if any(models[i].architecture != arch for i in ids):
        raise ValidationError("models disagree on architecture")

    n = len(ids)
    P = np.stack([models[i].params for i in ids])
    diff = P[:, None, :] - P[None, :, :]
    D = np.sqrt((diff**2).sum(axis=2))

    off = ~np.eye(n, dtype=bool)
    if n > 1 and D[off].max() > D[off].min():
        dmin, dmax = D[off].min(), D[off].max()
        Dn = (D - dmin) / (dmax - dmin)
        np.fill_diagonal(Dn, 0.0)
    else:
        Dn = np.zeros_like(D)

    gaps = np.zeros((n, n))
    undefined: List[Tuple[int, int]] = []
    cached_preds = {
        (i, j): predict_labels(models[ids[j]], ordered[i].features)
        for i in range(n)
        for j in range(n)
    }
    for i in range(n):
        for j in range(i, n):
            g_ij = gap_from_predictions(
                metric, cached_preds[(i, j)], ordered[i].labels, ordered[i].groups
            )
            g_ji = gap_from_predictions(
                metric, cached_preds[(j, i)], ordered[j].labels, ordered[j].groups
            )
            defined = [g for g in (g_ij, g_ji) if g is not None]
            if defined:
                val = max(defined)
            else:
                val = 0.0
                undefined.append((ids[i], ids[j]))
            gaps[i, j] = gaps[j, i] = val

    M = gamma * Dn + (1.0 - gamma) * gaps
    M = 0.5 * (M + M.T)  # exact symmetry despite float noise
    return MixedDissimilarity(M, Dn, gaps, tuple(ids), tuple(undefined))


@dataclass(frozen=True)
class HCParams:
    """Agglomerative clustering controls; set exactly one stop rule."""

    linkage: str = "average"  # 'single' | 'complete' | 'average'
    n_clusters: Optional[int] = None
    distance_threshold: Optional[float] = None

    def __post_init__(self):
        if self.linkage not in ("single", "complete", "average"):
            raise ValidationError(f"unknown linkage {self.linkage!r}")
        if (self.n_clusters is None) == (self.distance_threshold is None):
            raise ValidationError(
                "set exactly one of n_clusters / distance_threshold"
            )
        if self.n_clusters is not None and self.n_clusters < 1:
            raise ValidationError("n_clusters must be >= 1")


def hierarchical_cluster(matrix: np.ndarray, params: HCParams) -> List[List[int]]:
    """Bottom-up agglomeration with single/complete/average linkage.

    Inter-cluster distances are maintained incrementally (Lance-Williams
    updates). Merges stop at the target cluster count, or as soon as the
    closest pair is farther than the distance threshold. Ties pick the
    merge whose clusters contain the lexicographically smallest (i, j)
    original indices. Returns clusters of original indices, each sorted,
    ordered by first element.
    """
    M = np.asarray(matrix, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValidationError("matrix must be square")
    n = M.shape[0]
    if n == 0:
        raise ValidationError("matrix must be non-empty")
    if not np.isfinite(M).all():
        raise ValidationError("matrix entries must be finite")
    if np.abs(M - M.T).max() > 1e-12:
        raise ValidationError("matrix must be symmetric")
    if (M < 0).any():
        raise ValidationError("matrix must be non-negative")

    clusters: Dict[int, List[int]] = {i: [i] for i in range(n)}
    dist: Dict[Tuple[int, int], float] = {
        (i, j): float(M[i, j]) for i in range(n) for j in range(i + 1, n)
    }
    sizes = {i: 1 for i in range(n)}

    def key(a: int, b: int) -> Tuple[int, int]:
        return (a, b) if a < b else (b, a)

    target = params.n_clusters if params.n_clusters is not None else 1
    while len(clusters) > max(target, 1):
        best_pair, best_d = None, np.inf
        for (a, b), d in dist.items():
            if d < best_d or (d == best_d and (a, b) < best_pair):
                best_pair, best_d = (a, b), d
        if params.distance_threshold is not None and best_d > params.distance_threshold:
            break
        a, b = best_pair
        # merge b into a (a < b, so the merged cluster keeps the smaller id)
        for c in list(clusters):
            if c in (a, b):
                continue
            da, db = dist[key(a, c)], dist[key(b, c)]
            if params.linkage == "single":
                d_new = min(da, db)
            elif params.linkage == "complete":
                d_new = max(da, db)
            else:
                d_new = (sizes[a] * da + sizes[b] * db) / (sizes[a] + sizes[b])
            dist[key(a, c)] = d_new
            del dist[key(b, c)]
        del dist[(a, b)]
        clusters[a] = sorted(clusters[a] + clusters[b])
        sizes[a] += sizes[b]
        del clusters[b], sizes[b]

    return sorted((sorted(m) for m in clusters.values()), key=lambda c: c[0])


@dataclass(frozen=True)
class FLHCConfig:
    warmup_rounds: int            # federated rounds before clustering
    cluster_rounds: int           # federated rounds inside each cluster
    gamma: float
    metric: MetricLike = FairnessMetric.SP
    hc: HCParams = field(default_factory=lambda: HCParams(n_clusters=2))
    train: TrainConfig = field(default_factory=TrainConfig)
    base_seed: int = 0

    def __post_init__(self):
        if self.warmup_rounds < 1 or self.cluster_rounds < 1:
            raise ValidationError("warmup_rounds and cluster_rounds must be >= 1")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValidationError("gamma must be in [0, 1]")


@dataclass(frozen=True)
class FLHCResult:
    partition: Tuple[Tuple[int, ...], ...]       # client ids per cluster
    cluster_models: Tuple[ModelParams, ...]      # one per partition entry
    warmstart_model: ModelParams
    personalized: Dict[int, ModelParams]
    dissimilarity: MixedDissimilarity
    log: RoundLog


def run_fair_flhc(
    clients: Sequence[ClientDataset],
    cfg: FLHCConfig,
    init_model: Optional[ModelParams] = None,
) -> FLHCResult:
    """Warm start, personalize, cluster once, then train per cluster.

    Per-cluster training resumes from the warm-start global model using
    the same per-(round, client) seeds as a plain federated run, so a
    single-cluster outcome reproduces an uninterrupted federated run of
    warmup_rounds + cluster_rounds rounds exactly.
    """
    _check_clients(clients)
    ordered = _sorted_clients(clients)
    fed_cfg = FederationConfig(
        rounds=cfg.warmup_rounds, train=cfg.train, base_seed=cfg.base_seed
    )
    global_model, log = run_fedavg(ordered, fed_cfg, init_model=init_model)

    # Personalization pass; round index 0 keeps its seeds disjoint from
    # the numbered federated rounds.
    personalized = {
        c.client_id: client_update(c, global_model, cfg.train, cfg.base_seed, 0)
        for c in ordered
    }

    mixed = pairwise_mixed_matrix(ordered, personalized, cfg.gamma, cfg.metric)
    parts = hierarchical_cluster(mixed.matrix, cfg.hc)
    id_of = list(mixed.client_ids)
    partition = tuple(tuple(id_of[pos] for pos in part) for part in parts)

    cluster_models: List[ModelParams] = []
    for part in partition:
        members = [c for c in ordered if c.client_id in part]
        model = global_model
        for t in range(cfg.warmup_rounds + 1, cfg.warmup_rounds + cfg.cluster_rounds + 1):
            model, rec = fedavg_round(model, members, fed_cfg, t)
            log.append(rec)
        cluster_models.append(model)

    return FLHCResult(
        partition, tuple(cluster_models), global_model, personalized, mixed, log
    )
