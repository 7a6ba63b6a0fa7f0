"""Federated-learning simulator with fairness-aware clustering.

Subpackages cover synthetic/CSV client data, group-fairness gaps, small
SGD-trained classifiers, federated baselines (FedAvg, FedProx,
fine-tuning, standalone), fairness-aware clustered training, closed-form
threshold analysis for Gaussian populations, and a config-driven
experiment harness with a CLI.
"""

__version__ = "0.1.0"

from . import analytic, clustering, data, estimators, fairness, federation, harness, models

__all__ = [
    "__version__",
    "analytic",
    "clustering",
    "data",
    "estimators",
    "fairness",
    "federation",
    "harness",
    "models",
]
