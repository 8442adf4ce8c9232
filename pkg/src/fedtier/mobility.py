"""Client mobility and connectivity.

Each client gets a random one-hot association matrix mapping time slots
to locations; a global per-location connectivity vector then drives
Bernoulli online/offline draws. Rounds map onto slots cyclically. A
client sampled while offline banks one offline unit; each banked unit
buys one extra local epoch on 20% of its extra data shard once it is
back online.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Reporting buckets for the connectivity sweep: (low, high) of the uniform
# range each location's probability is drawn from.
LAMBDA_BUCKETS = {
    "low": (0.1, 0.4),
    "mid": (0.4, 0.7),
    "high": (0.7, 1.0),
}


@dataclass
class Eoam:
    """Exclusive location-per-slot matrix: T slots x S locations, one-hot rows."""

    matrix: np.ndarray

    def __post_init__(self):
        m = self.matrix
        if m.ndim != 2:
            raise ValueError("association matrix must be 2-D")
        if not np.isin(m, (0, 1)).all() or not (m.sum(axis=1) == 1).all():
            raise ValueError("every row must be one-hot")

    @property
    def n_slots(self) -> int:
        return self.matrix.shape[0]

    def location(self, slot: int) -> int:
        """Column index of the single 1 in the given row."""
        if not 0 <= slot < self.n_slots:
            raise ValueError(f"slot {slot} out of range [0, {self.n_slots})")
        return int(np.argmax(self.matrix[slot]))


@dataclass
class ConnectivityVector:
    """Per-location probability of being online."""

    lam: np.ndarray

    def __post_init__(self):
        self.lam = np.asarray(self.lam, dtype=np.float64)
        if self.lam.ndim != 1 or ((self.lam < 0) | (self.lam > 1)).any():
            raise ValueError("connectivity entries must be probabilities in [0, 1]")


@dataclass
class ConnectivityTrace:
    """Per-client online/offline history plus banked offline units."""

    online_history: list[bool] = field(default_factory=list)
    offline_units: int = 0

    def record(self, online: bool) -> None:
        self.online_history.append(online)
        if not online:
            self.offline_units += 1

    def spend_units(self) -> int:
        """Return the banked units and reset the bank."""
        units = self.offline_units
        self.offline_units = 0
        return units


def generate_eoam(n_slots: int, n_locations: int, rng: np.random.Generator) -> Eoam:
    """Uniformly random location per slot."""
    if n_slots < 1 or n_locations < 1:
        raise ValueError("need at least one slot and one location")
    matrix = np.zeros((n_slots, n_locations), dtype=np.int64)
    cols = rng.integers(0, n_locations, size=n_slots)
    matrix[np.arange(n_slots), cols] = 1
    return Eoam(matrix=matrix)


def sample_lambda(n_locations: int, bucket: str, rng: np.random.Generator) -> ConnectivityVector:
    """Draw each location's connectivity uniformly from the named bucket's range."""
    if bucket not in LAMBDA_BUCKETS:
        raise ValueError(f"unknown bucket {bucket!r}; choose from {sorted(LAMBDA_BUCKETS)}")
    lo, hi = LAMBDA_BUCKETS[bucket]
    return ConnectivityVector(lam=rng.uniform(lo, hi, size=n_locations))


def sample_online(
    eoam: Eoam, conn: ConnectivityVector, slot: int, rng: np.random.Generator
) -> bool:
    """Bernoulli draw with the connectivity of the client's location at this slot."""
    loc = eoam.location(slot)
    return bool(rng.random() < conn.lam[loc])


def sample_online_simple(disconnect_prob: float, rng: np.random.Generator) -> bool:
    """Location-free draw used when mobility is off: P(offline) = disconnect_prob."""
    return bool(rng.random() >= disconnect_prob)


def offline_to_epochs(units: int, extra_shard_size: int) -> tuple[int, int]:
    """Extra training bought by offline time.

    One epoch per banked unit, each over ceil(20%) of the extra shard.
    The ceiling is taken in integer arithmetic so 20% of e.g. 50 is
    exactly 10 regardless of float representation.
    """
    if units < 0 or extra_shard_size < 0:
        raise ValueError("units and shard size must be non-negative")
    return units, (extra_shard_size + 4) // 5
