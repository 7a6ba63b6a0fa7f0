"""Scratch: explore the 8-client synthetic experiment dynamics."""
import sys, time
import numpy as np
from fairfedsim.data import GaussianClientSpec, generate_clients, train_eval_split
from fairfedsim.clustering import FCAConfig, run_fair_fca
from fairfedsim.models import TrainConfig
from fairfedsim.harness import canonical_partition

# rows: (mu_1_a, mu_0_a, mu_1_b, mu_0_b)  group "1"->a, group "0"->b
D7 = [
    (8, 6, 8, 6),
    (12, 8, 11, 7),
    (7.5, 5.5, 7.5, 5.5),
    (12, 9, 12, 9),
    (12, 8, 11, 7),
    (11.5, 8.5, 11.5, 8.5),
    (11, 8, 11, 8),
    (10.5, 7.5, 10.5, 7.5),
]
SPECS = [GaussianClientSpec(*m, sigma=1.0, n_per_cell=1200) for m in D7]

TARGET = {
    1.0: ((1, 3), (2, 4, 5, 6, 7, 8)),
    0.0: ((1, 3, 4, 6, 7, 8), (2, 5)),
    0.5: ((1, 3, 7, 8), (2, 4, 5, 6)),
}

def one_run(gamma, seed, rounds=30, epochs=1, lr=0.05, batch=256, stable=3,
            weighting="cluster", init_epochs=None, eval_fraction=0.2):
    clients = generate_clients(SPECS, seed=seed, first_id=1)
    train = [train_eval_split(c, eval_fraction, seed=seed)[0] for c in clients]
    cfg = FCAConfig(
        n_clusters=2, gamma=gamma, metric="sp",
        train=TrainConfig(epochs=epochs, learning_rate=lr, batch_size=batch),
        base_seed=seed, max_rounds=rounds, stable_rounds=stable,
        cluster_weighting=weighting, init_epochs=init_epochs,
    )
    state, local, log = run_fair_fca(train, cfg)
    return canonical_partition(state.partition()), state, log

if __name__ == "__main__":
    t0 = time.time()
    for gamma in (1.0, 0.0, 0.5):
        parts = []
        for run in range(5):
            p, state, log = one_run(gamma, seed=1000 + run)
            parts.append(p)
        hit = sum(p == canonical_partition(TARGET[gamma]) for p in parts)
        print(f"gamma={gamma}: hits={hit}/5")
        for p in parts:
            print("   ", p)
    print(f"elapsed {time.time()-t0:.1f}s")
