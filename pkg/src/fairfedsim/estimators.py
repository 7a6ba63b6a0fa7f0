"""Sklearn-style estimator wrappers for the federated algorithms.

Each estimator takes flat hyperparameters in its constructor (so
`get_params` / `set_params` / `clone` work), fits on a list of
`ClientDataset`s, and exposes fitted state through trailing-underscore
attributes. `model_for(client_id)` returns the model a given client
deploys, which is what per-client evaluation should use:

* FedAvg / FedProx: the shared global model
* Standalone / FineTune: the client's personal model
* FairFCA / FairFLHC: the model of the client's cluster
"""

from __future__ import annotations

from typing import Dict, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .clustering import (
    FCAConfig,
    FLHCConfig,
    HCParams,
    run_fair_fca,
    run_fair_flhc,
)
from .data import ClientDataset
from .errors import ValidationError
from .federation import (
    FederationConfig,
    run_fedavg,
    run_finetune,
    run_standalone,
)
from .models import ModelParams, TrainConfig, predict_labels, predict_proba


class _FederatedEstimator(BaseEstimator):
    """Shared plumbing: train config assembly and per-client prediction."""

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
        )

    def _check_fitted(self):
        if not hasattr(self, "client_models_"):
            raise ValidationError("estimator is not fitted; call fit(clients) first")

    def model_for(self, client_id: int) -> ModelParams:
        self._check_fitted()
        if client_id not in self.client_models_:
            raise ValidationError(f"unknown client id {client_id}")
        return self.client_models_[client_id]

    def predict_proba(self, X, client_id: Optional[int] = None) -> np.ndarray:
        model = self._deploy_model(client_id)
        return predict_proba(model, X)

    def predict(self, X, client_id: Optional[int] = None) -> np.ndarray:
        model = self._deploy_model(client_id)
        return predict_labels(model, X)

    def _deploy_model(self, client_id: Optional[int]) -> ModelParams:
        self._check_fitted()
        if client_id is None:
            if getattr(self, "global_model_", None) is None:
                raise ValidationError("this algorithm is per-client; pass client_id")
            return self.global_model_
        return self.model_for(client_id)


class FedAvg(_FederatedEstimator):
    """Weighted parameter averaging across all clients every round."""

    def __init__(self, rounds=50, epochs=1, learning_rate=0.05, batch_size=64,
                 base_seed=0):
        self.rounds = rounds
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.base_seed = base_seed

    def _federation_config(self) -> FederationConfig:
        return FederationConfig(
            rounds=self.rounds, train=self._train_config(), base_seed=self.base_seed
        )

    def fit(self, clients: Sequence[ClientDataset], init_model=None):
        global_model, log = run_fedavg(clients, self._federation_config(), init_model)
        self.global_model_ = global_model
        self.client_models_ = {c.client_id: global_model for c in clients}
        self.round_log_ = log
        return self


class FedProx(FedAvg):
    """FedAvg with an l2 proximal pull toward the round-start global model."""

    def __init__(self, rounds=50, epochs=1, learning_rate=0.05, batch_size=64,
                 base_seed=0, mu=0.1):
        super().__init__(rounds, epochs, learning_rate, batch_size, base_seed)
        self.mu = mu

    def _federation_config(self) -> FederationConfig:
        return FederationConfig(
            rounds=self.rounds, train=self._train_config(),
            base_seed=self.base_seed, mu=self.mu,
        )


class FineTune(FedAvg):
    """FedAvg followed by per-client full-batch fine-tuning steps."""

    def __init__(self, rounds=50, epochs=1, learning_rate=0.05, batch_size=64,
                 base_seed=0, extra_steps=10, finetune_learning_rate=0.01):
        super().__init__(rounds, epochs, learning_rate, batch_size, base_seed)
        self.extra_steps = extra_steps
        self.finetune_learning_rate = finetune_learning_rate

    def fit(self, clients: Sequence[ClientDataset], init_model=None):
        cfg = FederationConfig(
            rounds=self.rounds, train=self._train_config(), base_seed=self.base_seed,
            finetune_steps=self.extra_steps,
            finetune_learning_rate=self.finetune_learning_rate,
        )
        personalized, global_model, log = run_finetune(clients, cfg, init_model)
        self.global_model_ = global_model
        self.client_models_ = personalized
        self.round_log_ = log
        return self


class Standalone(_FederatedEstimator):
    """Each client trains alone; no collaboration."""

    def __init__(self, rounds=50, epochs=1, learning_rate=0.05, batch_size=64,
                 base_seed=0):
        self.rounds = rounds
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.base_seed = base_seed

    def fit(self, clients: Sequence[ClientDataset], init_model=None):
        cfg = FederationConfig(
            rounds=self.rounds, train=self._train_config(), base_seed=self.base_seed
        )
        self.client_models_ = run_standalone(clients, cfg, init_model)
        self.global_model_ = None
        return self


class FairFCA(_FederatedEstimator):
    """Iterative clustering on a mixed accuracy/fairness assignment score.

    gamma = 1 assigns by loss alone; gamma = 0 by the fairness gap alone.
    """

    def __init__(self, n_clusters=2, gamma=1.0, metric="sp", max_rounds=100,
                 stable_rounds=3, epochs=1, learning_rate=0.05, batch_size=64,
                 base_seed=0, cluster_weighting="cluster", init_epochs=None):
        self.n_clusters = n_clusters
        self.gamma = gamma
        self.metric = metric
        self.max_rounds = max_rounds
        self.stable_rounds = stable_rounds
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.base_seed = base_seed
        self.cluster_weighting = cluster_weighting
        self.init_epochs = init_epochs

    def fit(self, clients: Sequence[ClientDataset], init_models=None):
        cfg = FCAConfig(
            n_clusters=self.n_clusters, gamma=self.gamma, metric=self.metric,
            train=self._train_config(), base_seed=self.base_seed,
            max_rounds=self.max_rounds, stable_rounds=self.stable_rounds,
            cluster_weighting=self.cluster_weighting, init_epochs=self.init_epochs,
        )
        state, local_models, log = run_fair_fca(clients, cfg, init_models)
        self.state_ = state
        self.assignment_ = dict(state.assignment)
        self.partition_ = state.partition()
        self.cluster_models_ = list(state.cluster_models)
        self.local_models_ = local_models
        self.client_models_ = {
            cid: state.cluster_models[k] for cid, k in state.assignment.items()
        }
        self.global_model_ = None
        self.history_ = log
        return self


class FairFLHC(_FederatedEstimator):
    """Warm start, personalize, hierarchically cluster once, train per cluster."""

    def __init__(self, warmup_rounds=20, cluster_rounds=30, gamma=1.0, metric="sp",
                 linkage="average", n_clusters=2, distance_threshold=None,
                 epochs=1, learning_rate=0.05, batch_size=64, base_seed=0):
        self.warmup_rounds = warmup_rounds
        self.cluster_rounds = cluster_rounds
        self.gamma = gamma
        self.metric = metric
        self.linkage = linkage
        self.n_clusters = n_clusters
        self.distance_threshold = distance_threshold
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.base_seed = base_seed

    def fit(self, clients: Sequence[ClientDataset], init_model=None):
        hc = HCParams(
            linkage=self.linkage,
            n_clusters=self.n_clusters if self.distance_threshold is None else None,
            distance_threshold=self.distance_threshold,
        )
        cfg = FLHCConfig(
            warmup_rounds=self.warmup_rounds, cluster_rounds=self.cluster_rounds,
            gamma=self.gamma, metric=self.metric, hc=hc,
            train=self._train_config(), base_seed=self.base_seed,
        )
        result = run_fair_flhc(clients, cfg, init_model)
        self.result_ = result
        self.partition_ = result.partition
        self.cluster_models_ = list(result.cluster_models)
        self.assignment_ = {
            cid: k for k, part in enumerate(result.partition) for cid in part
        }
        self.client_models_ = {
            cid: result.cluster_models[k] for cid, k in self.assignment_.items()
        }
        self.global_model_ = None
        self.history_ = result.log
        return self


ALGORITHMS = {
    "standalone": Standalone,
    "fedavg": FedAvg,
    "fedprox": FedProx,
    "finetune": FineTune,
    "fair_fca": FairFCA,
    "fair_flhc": FairFLHC,
}
