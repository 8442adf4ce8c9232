"""Encoder/classifier split and budget-driven classifier selection.

The classifier must fit in UCD memory: parameter count x bytes-per-param
strictly below the available bytes. Selection over the candidate family
is by configurable policy, since "the best classifier that fits" can
mean cheapest or most capable depending on what the budget is for.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import Network, make_network


class BudgetInfeasibleError(Exception):
    """No classifier candidate fits the device memory budget."""


@dataclass
class ClassifierCandidate:
    hidden_widths: list[int]
    output_classes: int

    def __post_init__(self):
        if self.output_classes <= 0:
            raise ValueError(f"output_classes must be positive, got {self.output_classes}")
        if any(w <= 0 for w in self.hidden_widths):
            raise ValueError(f"hidden widths must be positive, got {self.hidden_widths}")

    def dims(self, in_dim: int) -> list[int]:
        return [in_dim, *self.hidden_widths, self.output_classes]


@dataclass
class MemoryBudget:
    available_bytes: int
    bytes_per_param: int = 4

    def __post_init__(self):
        if self.available_bytes <= 0 or self.bytes_per_param <= 0:
            raise ValueError("available_bytes and bytes_per_param must be positive")


@dataclass
class ModelPartition:
    encoder: Network
    classifier: Network
    encoder_frozen_on_ucd: bool = field(default=True)

    def __post_init__(self):
        if self.encoder.out_dim != self.classifier.in_dim:
            raise ValueError(
                f"encoder output dim {self.encoder.out_dim} != "
                f"classifier input dim {self.classifier.in_dim}"
            )


def count_params(net: Network) -> int:
    """Exact number of weight and bias entries."""
    return sum(l.weights.size + l.bias.size for l in net.layers)


def candidate_params(candidate: ClassifierCandidate, in_dim: int) -> int:
    dims = candidate.dims(in_dim)
    return sum(dims[i] * dims[i + 1] + dims[i + 1] for i in range(len(dims) - 1))


def select_classifier(
    candidates: list[ClassifierCandidate],
    budget: MemoryBudget,
    in_dim: int,
    policy: str = "largest_feasible",
) -> ClassifierCandidate:
    """Pick the candidate to deploy on the UCD.

    Feasible means params x bytes_per_param < available_bytes (strict).
    policy "smallest_feasible" returns the cheapest feasible candidate,
    "largest_feasible" the most capable one that still fits.
    """
    if not candidates:
        raise ValueError("candidate list is empty")
    if policy not in ("smallest_feasible", "largest_feasible"):
        raise ValueError(f"unknown policy {policy!r}")
    ordered = sorted(candidates, key=lambda c: candidate_params(c, in_dim))
    feasible = [
        c for c in ordered
        if candidate_params(c, in_dim) * budget.bytes_per_param < budget.available_bytes
    ]
    if not feasible:
        smallest = candidate_params(ordered[0], in_dim)
        raise BudgetInfeasibleError(
            f"budget infeasible: smallest candidate needs "
            f"{smallest * budget.bytes_per_param} bytes, only "
            f"{budget.available_bytes} available"
        )
    return feasible[0] if policy == "smallest_feasible" else feasible[-1]


def build_partition(
    encoder_dims: list[int],
    chosen: ClassifierCandidate,
    budget: MemoryBudget,
    rng: np.random.Generator,
) -> ModelPartition:
    """Construct seeded encoder and classifier networks and recheck the budget.

    The encoder ends in ReLU (it produces features); the classifier ends
    in identity (it produces logits).
    """
    encoder = make_network(list(encoder_dims), rng, final_relu=True)
    classifier = make_network(chosen.dims(encoder_dims[-1]), rng)
    used = count_params(classifier) * budget.bytes_per_param
    if used >= budget.available_bytes:
        raise BudgetInfeasibleError(
            f"built classifier needs {used} bytes, only {budget.available_bytes} available"
        )
    return ModelPartition(encoder=encoder, classifier=classifier)
