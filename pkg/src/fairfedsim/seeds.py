"""Deterministic seed derivation.

All randomness in the package flows through `numpy.random.Generator`
instances created here. Seeds for sub-tasks (a client's local update in a
given round, a run of an experiment, ...) are derived from integer tuples
via `SeedSequence`, so results are reproducible and independent of
scheduling order.
"""

from __future__ import annotations

import numpy as np

# Tags keep seed streams for different purposes disjoint even when the
# remaining key integers collide.
TAG_INIT = 0
TAG_TRAIN = 1
TAG_DATA = 2
TAG_SELECT = 3


def derive_seed(*parts: int) -> int:
    """Collapse a tuple of non-negative ints into a single 32-bit seed."""
    if any(p < 0 for p in parts):
        raise ValueError(f"seed parts must be non-negative, got {parts}")
    return int(np.random.SeedSequence(parts).generate_state(1)[0])


def make_rng(*parts: int) -> np.random.Generator:
    """Generator seeded from a derived seed."""
    return np.random.default_rng(np.random.SeedSequence(parts))


def client_round_seed(base_seed: int, round_index: int, client_id: int) -> int:
    """Seed for one client's local training in one round."""
    return derive_seed(base_seed, TAG_TRAIN, round_index, client_id)


def init_seed(base_seed: int, index: int = 0) -> int:
    """Seed for model initialization."""
    return derive_seed(base_seed, TAG_INIT, index)
