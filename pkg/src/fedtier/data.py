"""Synthetic data, non-IID client partitioning, and shard splits.

The synthetic task is Gaussian class clusters; `spread` controls how
much they overlap and therefore how hard the task is. Client skew comes
from per-class Dirichlet allocation: alpha large gives every client a
near-uniform class mix, alpha near zero gives near-single-class clients.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass

import numpy as np


@dataclass
class Dataset:
    features: np.ndarray  # (n, dim) float64
    labels: np.ndarray  # (n,) int64
    classes: int

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or len(self.features) != len(self.labels):
            raise ValueError("features must be 2-D and row-aligned with labels")
        if self.classes < 2:
            raise ValueError("need at least two classes")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.classes):
            raise ValueError(f"labels must lie in [0, {self.classes})")

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class ClientShards:
    """One client's data: the part available online and the extra part
    that offline time unlocks for additional local epochs."""

    online: np.ndarray
    extra: np.ndarray


def make_blobs(
    classes: int, per_class: int, dim: int, spread: float, rng: np.random.Generator
) -> Dataset:
    """Gaussian clusters around unit-normal class centers, shuffled row order."""
    if classes < 2 or per_class < 1 or dim < 1 or spread < 0:
        raise ValueError("classes >= 2, per_class >= 1, dim >= 1, spread >= 0 required")
    centers = rng.normal(size=(classes, dim))
    features = np.repeat(centers, per_class, axis=0) + spread * rng.normal(
        size=(classes * per_class, dim)
    )
    labels = np.repeat(np.arange(classes), per_class)
    order = rng.permutation(classes * per_class)
    return Dataset(features=features[order], labels=labels[order], classes=classes)


def split_pools(
    n: int, test_fraction: float, pretrain_fraction: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Random disjoint (train, test, pretrain) index pools covering range(n)."""
    if not 0 < test_fraction < 1 or not 0 <= pretrain_fraction < 1:
        raise ValueError("fractions must be in (0, 1)")
    if test_fraction + pretrain_fraction >= 1:
        raise ValueError("test and pretrain fractions leave no training data")
    perm = rng.permutation(n)
    n_test = int(round(test_fraction * n))
    n_pre = int(round(pretrain_fraction * n))
    return perm[n_test + n_pre :], perm[:n_test], perm[n_test : n_test + n_pre]


def dirichlet_partition(
    labels: np.ndarray, num_clients: int, lda_alpha: float, rng: np.random.Generator
) -> list[np.ndarray]:
    """Assign every sample position to exactly one client.

    Per class, client proportions are drawn from a symmetric Dirichlet
    and the class's samples are split at the cumulative boundaries, so
    nothing is lost or duplicated. A client can come out empty under
    extreme skew; that is allowed and reported as a warning.
    """
    if lda_alpha <= 0:
        raise ValueError("lda_alpha must be positive")
    if num_clients < 1:
        raise ValueError("need at least one client")
    labels = np.asarray(labels)
    parts: list[list[np.ndarray]] = [[] for _ in range(num_clients)]
    for cls in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == cls))
        props = rng.dirichlet(np.full(num_clients, lda_alpha))
        bounds = (np.cumsum(props)[:-1] * len(idx)).astype(np.int64)
        for client, chunk in enumerate(np.split(idx, bounds)):
            parts[client].append(chunk)
    out = [np.sort(np.concatenate(p)) if p else np.empty(0, np.int64) for p in parts]
    empty = [i for i, p in enumerate(out) if len(p) == 0]
    if empty:
        warnings.warn(f"clients {empty} received no samples under lda_alpha={lda_alpha}")
    return out


def split_online_extra(
    client_indices: np.ndarray, rng: np.random.Generator, fraction: float = 0.5
) -> ClientShards:
    """Random disjoint split of one client's indices into online and extra shards."""
    if not 0 < fraction < 1:
        raise ValueError("fraction must be in (0, 1)")
    perm = rng.permutation(client_indices)
    n_online = int(round(fraction * len(perm)))
    return ClientShards(online=np.sort(perm[:n_online]), extra=np.sort(perm[n_online:]))


def load_csv_dataset(path: str) -> Dataset:
    """Small external datasets: header row, integer 'label' column, float features."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if "label" not in header:
            raise ValueError(f"{path}: no 'label' column in header {header}")
        label_col = header.index("label")
        feats, labels = [], []
        for row in reader:
            labels.append(int(row[label_col]))
            feats.append([float(v) for i, v in enumerate(row) if i != label_col])
    if not labels:
        raise ValueError(f"{path}: no data rows")
    labels_arr = np.asarray(labels, dtype=np.int64)
    return Dataset(
        features=np.asarray(feats, dtype=np.float64),
        labels=labels_arr,
        classes=int(labels_arr.max()) + 1,
    )
