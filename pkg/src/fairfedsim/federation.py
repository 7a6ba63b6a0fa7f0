"""Round-based federated learning: FedAvg, FedProx, fine-tuning, standalone.

Every round all clients participate. A client's local update in round t is
seeded by (base_seed, round t, client_id), so rounds are reproducible and
client updates could run in any order (aggregation always sums in sorted
client-id order). FedProx anchors each local objective to the round-start
global model with an l2 penalty; fine-tuning appends extra full-batch
gradient steps per client after the final round.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import ClientDataset
from .errors import DivergenceError, ValidationError
from .models import (
    Architecture,
    ModelParams,
    ProximalTerm,
    TrainConfig,
    full_batch_steps,
    init_params,
    loss,
    sgd_train,
)
from .seeds import client_round_seed, init_seed


@dataclass(frozen=True)
class FederationConfig:
    rounds: int
    train: TrainConfig
    base_seed: int = 0
    mu: float = 0.0                   # FedProx proximal strength
    finetune_steps: int = 0           # extra local full-batch steps
    finetune_learning_rate: float = 0.01

    def __post_init__(self):
        if self.rounds < 1:
            raise ValidationError("rounds must be >= 1")
        if self.mu < 0:
            raise ValidationError("mu must be >= 0")
        if self.finetune_steps < 0:
            raise ValidationError("finetune_steps must be >= 0")


@dataclass(frozen=True)
class RoundRecord:
    round_index: int
    client_losses: Dict[int, float]
    model_hash: str


RoundLog = List[RoundRecord]


def model_hash(model: ModelParams) -> str:
    return hashlib.sha256(np.ascontiguousarray(model.params).tobytes()).hexdigest()[:16]


def _check_clients(clients: Sequence[ClientDataset]) -> int:
    if not clients:
        raise ValidationError("need at least one client")
    dims = {c.dim for c in clients}
    if len(dims) != 1:
        raise ValidationError(f"clients disagree on feature dimension: {sorted(dims)}")
    ids = [c.client_id for c in clients]
    if len(set(ids)) != len(ids):
        raise ValidationError("client ids must be unique")
    return dims.pop()


def aggregate_weighted(
    models: Sequence[ModelParams], weights: Sequence[float]
) -> ModelParams:
    """Coordinate-wise weighted mean; weights normalized internally."""
    if not models:
        raise ValidationError("nothing to aggregate")
    if len(models) != len(weights):
        raise ValidationError("one weight per model required")
    arch = models[0].architecture
    if any(m.architecture != arch for m in models):
        raise ValidationError("aggregation requires a single architecture")
    w = np.asarray(weights, dtype=np.float64)
    if (w < 0).any():
        raise ValidationError("weights must be >= 0")
    total = w.sum()
    if total <= 0:
        raise ValidationError("weights must not all be zero")
    w = w / total
    out = np.zeros_like(models[0].params)
    for wi, m in zip(w, models):
        out += wi * m.params
    return ModelParams(arch, out)


def _sorted_clients(clients: Sequence[ClientDataset]) -> List[ClientDataset]:
    return sorted(clients, key=lambda c: c.client_id)


def client_update(
    client: ClientDataset,
    start: ModelParams,
    train: TrainConfig,
    base_seed: int,
    round_index: int,
    mu: float = 0.0,
) -> ModelParams:
    """One client's local training for one round, seeded deterministically."""
    cfg = train.with_seed(client_round_seed(base_seed, round_index, client.client_id))
    if mu:
        cfg = cfg.with_proximal(ProximalTerm(mu=mu, anchor=start))
    try:
        return sgd_train(start, client, cfg)
    except DivergenceError as err:
        raise DivergenceError(f"client {client.client_id}: {err}") from err


def fedavg_round(
    global_model: ModelParams,
    clients: Sequence[ClientDataset],
    cfg: FederationConfig,
    round_index: int,
) -> Tuple[ModelParams, RoundRecord]:
    """Local updates from the global model, then n_i-weighted aggregation."""
    _check_clients(clients)
    ordered = _sorted_clients(clients)
    locals_, losses = [], {}
    for c in ordered:
        updated = client_update(c, global_model, cfg.train, cfg.base_seed, round_index, cfg.mu)
        locals_.append(updated)
        losses[c.client_id] = loss(updated, c)
    new_global = aggregate_weighted(locals_, [c.n for c in ordered])
    return new_global, RoundRecord(round_index, losses, model_hash(new_global))


def _default_init(clients: Sequence[ClientDataset], cfg: FederationConfig) -> ModelParams:
    dim = _check_clients(clients)
    return init_params(Architecture("linear", dim), init_seed(cfg.base_seed))


def run_fedavg(
    clients: Sequence[ClientDataset],
    cfg: FederationConfig,
    init_model: Optional[ModelParams] = None,
) -> Tuple[ModelParams, RoundLog]:
    """T rounds of FedAvg from a seeded (or supplied) initialization."""
    global_model = init_model if init_model is not None else _default_init(clients, cfg)
    log: RoundLog = []
    for t in range(1, cfg.rounds + 1):
        global_model, rec = fedavg_round(global_model, clients, cfg, t)
        log.append(rec)
    return global_model, log


def run_fedprox(
    clients: Sequence[ClientDataset],
    cfg: FederationConfig,
    init_model: Optional[ModelParams] = None,
) -> Tuple[ModelParams, RoundLog]:
    """FedAvg whose local objectives carry the proximal term (mu, round-start global)."""
    return run_fedavg(clients, cfg, init_model=init_model)


def run_finetune(
    clients: Sequence[ClientDataset],
    cfg: FederationConfig,
    init_model: Optional[ModelParams] = None,
) -> Tuple[Dict[int, ModelParams], ModelParams, RoundLog]:
    """FedAvg, then per-client full-batch fine-tuning from the final global."""
    global_model, log = run_fedavg(clients, cfg, init_model=init_model)
    personalized = {
        c.client_id: full_batch_steps(
            global_model, c, cfg.finetune_steps, cfg.finetune_learning_rate
        )
        for c in _sorted_clients(clients)
    }
    return personalized, global_model, log


def run_standalone(
    clients: Sequence[ClientDataset],
    cfg: FederationConfig,
    init_model: Optional[ModelParams] = None,
) -> Dict[int, ModelParams]:
    """Each client trains alone: same init, same train config, no sharing.

    The outcome for a client depends only on (its data, cfg), so adding or
    removing other clients never changes it. Total optimization effort
    matches a federated run (rounds x epochs).
    """
    init = init_model if init_model is not None else _default_init(clients, cfg)
    out: Dict[int, ModelParams] = {}
    for c in _sorted_clients(clients):
        model = init
        for t in range(1, cfg.rounds + 1):
            model = sgd_train(model, c, cfg.train.with_seed(
                client_round_seed(cfg.base_seed, t, 0)))
        out[c.client_id] = model
    return out
