"""Named deterministic random streams.

Every stochastic step draws from its own Generator derived from the run
seed and a fixed stream label, so adding draws to one step never shifts
another, and per-client streams are independent of the order clients are
processed in (which is what makes parallel execution reproducible).
"""
from __future__ import annotations

import numpy as np

# Stream labels. Values are part of the reproducibility contract: changing
# one changes every run's trajectory.
STREAM_DATA = 0        # synthetic dataset generation
STREAM_PARTITION = 1   # client shard assignment
STREAM_SAMPLING = 2    # per-round client sampling
STREAM_SELECTION = 3   # per-client data-selection coin flips
STREAM_MOBILITY = 4    # per-(client, round) connectivity draws
STREAM_INIT = 5        # model weight initialisation
STREAM_PRETRAIN = 6    # central encoder pretraining (label shuffle + batch order)


def stream(seed: int, *key: int) -> np.random.Generator:
    """Generator for the substream identified by ``key`` under ``seed``."""
    return np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=tuple(key)))
    )
