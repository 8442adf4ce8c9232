"""On-device data selection.

Each client keeps sliding windows of recent loss values and last-layer
gradient norms. A new sample's empirical CDF position c in the window
drives three Bernoulli routes: discard with 1 - c^alpha, else transmit
to the AP with c^beta, else keep for local classifier training; kept
samples are additionally copied to the transmit set with c_g^gamma on
their gradient norm. High-loss samples are therefore likely to be sent
upstream, low-loss samples likely to be dropped.

The two coin flips are sequential and the second is only drawn when the
first keeps the sample; that conditional draw order is part of the
reproducibility contract.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np


class ColdStartError(Exception):
    """CDF queried before any value was enqueued."""


@dataclass
class SelectionParams:
    alpha: float = 5.0
    beta: float = 3.0
    gamma: float = 0.0
    warmup_min: int = 32

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.gamma < 0:
            raise ValueError("selectivity exponents must be non-negative")
        if self.warmup_min < 1:
            raise ValueError("warmup_min must be at least 1")


class SlidingCDF:
    """Fixed-capacity FIFO of recent values with empirical-CDF queries."""

    def __init__(self, capacity: int = 1000) -> None:
        if capacity < 1:
            raise ValueError("capacity must be at least 1")
        self.capacity = capacity
        self._queue: deque[float] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._queue)

    def push(self, value: float) -> None:
        self._queue.append(float(value))

    def push_many(self, values: np.ndarray) -> None:
        for v in values:
            self._queue.append(float(v))

    def cdf(self, value: float) -> float:
        """Fraction of queued values <= value (weak inequality)."""
        if not self._queue:
            raise ColdStartError("empirical CDF queried with an empty queue")
        return sum(1 for q in self._queue if q <= value) / len(self._queue)

    def cdf_batch(self, values: np.ndarray) -> np.ndarray:
        """Vectorized cdf() against one snapshot of the queue."""
        if not self._queue:
            raise ColdStartError("empirical CDF queried with an empty queue")
        snapshot = np.sort(np.asarray(self._queue, dtype=np.float64))
        counts = np.searchsorted(snapshot, np.asarray(values, dtype=np.float64), side="right")
        return counts / len(snapshot)


@dataclass
class RoutedBatch:
    """Index sets over the routed batch: discard / keep local / transmit."""

    discard_idx: np.ndarray
    classifier_idx: np.ndarray
    transmit_idx: np.ndarray


@dataclass
class SelectionState:
    """Per-client selection memory; owned by exactly one client."""

    loss_cdf: SlidingCDF = field(default_factory=SlidingCDF)
    grad_cdf: SlidingCDF = field(default_factory=SlidingCDF)


def route_by_loss(
    losses: np.ndarray,
    cdf: SlidingCDF,
    params: SelectionParams,
    rng: np.random.Generator,
) -> RoutedBatch:
    """Split a batch by loss into discard / local / transmit routes.

    The whole batch is scored against the queue state from before the
    batch; all losses are enqueued afterwards (warmup included, so the
    window seeds itself). Below warmup_min queued values everything is
    kept local.
    """
    losses = np.asarray(losses, dtype=np.float64)
    n = len(losses)
    if len(cdf) < params.warmup_min:
        routed = RoutedBatch(
            discard_idx=np.empty(0, dtype=np.int64),
            classifier_idx=np.arange(n, dtype=np.int64),
            transmit_idx=np.empty(0, dtype=np.int64),
        )
        cdf.push_many(losses)
        return routed
    c = cdf.cdf_batch(losses)
    p_discard = 1.0 - c**params.alpha
    p_transmit = c**params.beta
    discard, local, transmit = [], [], []
    for i in range(n):
        if rng.random() < p_discard[i]:
            discard.append(i)
        elif rng.random() < p_transmit[i]:
            transmit.append(i)
        else:
            local.append(i)
    cdf.push_many(losses)
    return RoutedBatch(
        discard_idx=np.array(discard, dtype=np.int64),
        classifier_idx=np.array(local, dtype=np.int64),
        transmit_idx=np.array(transmit, dtype=np.int64),
    )


def route_by_grad(
    grad_norms: np.ndarray,
    cdf: SlidingCDF,
    params: SelectionParams,
    rng: np.random.Generator,
) -> np.ndarray:
    """Positions (into grad_norms) to copy into the transmit set.

    Applies to samples already kept local; they stay local regardless
    (the local update already happened), a copy just also goes upstream.
    Norms are enqueued afterwards; during warmup nothing is added.
    """
    grad_norms = np.asarray(grad_norms, dtype=np.float64)
    if len(cdf) < params.warmup_min:
        cdf.push_many(grad_norms)
        return np.empty(0, dtype=np.int64)
    c = cdf.cdf_batch(grad_norms)
    p_copy = c**params.gamma
    chosen = [i for i in range(len(grad_norms)) if rng.random() < p_copy[i]]
    cdf.push_many(grad_norms)
    return np.array(chosen, dtype=np.int64)
