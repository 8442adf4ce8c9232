"""Dense networks with exact MAC accounting.

Everything is float64 and seeded; no module-level state. MACs count one
multiply-accumulate per matmul entry (batch x in x out per layer), which
is the unit every latency and energy figure downstream is built on.
Backward cost is not measured but charged as a fixed multiple of the
forward cost of the layers that actually receive gradients.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ._backend import dense_forward, dense_backward, softmax_xent


@dataclass
class DenseLayer:
    weights: np.ndarray  # (fan_in, fan_out)
    bias: np.ndarray  # (fan_out,)
    relu: bool

    @property
    def fan_in(self) -> int:
        return self.weights.shape[0]

    @property
    def fan_out(self) -> int:
        return self.weights.shape[1]


@dataclass
class Network:
    layers: list[DenseLayer]

    @property
    def in_dim(self) -> int:
        return self.layers[0].fan_in

    @property
    def out_dim(self) -> int:
        return self.layers[-1].fan_out


@dataclass
class GradientSet:
    """Per-layer gradients, shape-congruent with the Network that made them."""

    weight_grads: list[np.ndarray]
    bias_grads: list[np.ndarray]


@dataclass
class ActivationRecord:
    """Forward cache: activations[0] is the input, activations[i+1] layer i's output."""

    activations: list[np.ndarray]


class PassMacs(NamedTuple):
    forward: int
    backward: int

    @property
    def total(self) -> int:
        return self.forward + self.backward


def make_network(dims: list[int], rng: np.random.Generator, final_relu: bool = False) -> Network:
    """Build dims[0] -> dims[1] -> ... with ReLU everywhere except (optionally) the last layer.

    Weights and bias are uniform in +-1/sqrt(fan_in). Draw order (weights
    then bias, layer by layer) is part of the reproducibility contract.
    """
    if len(dims) < 2:
        raise ValueError(f"need at least input and output dims, got {dims}")
    layers = []
    last = len(dims) - 2
    for i in range(len(dims) - 1):
        fan_in, fan_out = dims[i], dims[i + 1]
        bound = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
        b = rng.uniform(-bound, bound, size=fan_out)
        relu = True if i < last else final_relu
        layers.append(DenseLayer(weights=w, bias=b, relu=relu))
    return Network(layers=layers)


def clone_network(net: Network) -> Network:
    return Network(
        layers=[
            DenseLayer(weights=l.weights.copy(), bias=l.bias.copy(), relu=l.relu)
            for l in net.layers
        ]
    )


def compose(*nets: Network) -> Network:
    """Chain networks into one; layers are shared, not copied, so training
    the composite updates the originals in place."""
    layers: list[DenseLayer] = []
    for net in nets:
        layers.extend(net.layers)
    for i in range(len(layers) - 1):
        if layers[i].fan_out != layers[i + 1].fan_in:
            raise ValueError(
                f"layer {i} output dim {layers[i].fan_out} != "
                f"layer {i + 1} input dim {layers[i + 1].fan_in}"
            )
    return Network(layers=layers)


def forward_macs(net: Network, batch: int) -> int:
    """MACs of one forward pass at the given batch size; data independent."""
    return sum(batch * l.fan_in * l.fan_out for l in net.layers)


def forward(net: Network, x: np.ndarray) -> tuple[np.ndarray, ActivationRecord, int]:
    """Forward pass. Returns (output, activation cache, forward MACs)."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    acts = [x]
    macs = 0
    for i, layer in enumerate(net.layers):
        if x.shape[1] != layer.fan_in:
            raise ValueError(
                f"layer {i}: input has {x.shape[1]} features, expected {layer.fan_in}"
            )
        macs += x.shape[0] * layer.fan_in * layer.fan_out
        x = dense_forward(x, layer.weights, layer.bias, layer.relu)
        acts.append(x)
    return x, ActivationRecord(activations=acts), macs


def _check_labels(y: np.ndarray, classes: int, n: int) -> np.ndarray:
    y = np.ascontiguousarray(y, dtype=np.int64)
    if y.shape != (n,):
        raise ValueError(f"labels shape {y.shape} != ({n},)")
    if y.size and (y.min() < 0 or y.max() >= classes):
        raise ValueError(f"labels must lie in [0, {classes})")
    return y


def loss_and_grad(
    net: Network,
    x: np.ndarray,
    y: np.ndarray,
    backward_multiplier: float = 2.0,
) -> tuple[np.ndarray, GradientSet, PassMacs]:
    """Softmax cross-entropy pass over one batch.

    Returns per-sample losses, mean-loss gradients for every layer of
    ``net``, and the MAC bill: forward exactly, backward as
    ``backward_multiplier`` x the forward cost of the layers trained here
    (frozen layers must simply not be part of ``net`` for this call).
    """
    logits, cache, fwd = forward(net, x)
    n = logits.shape[0]
    y = _check_labels(y, logits.shape[1], n)
    losses, dlogits = softmax_xent(logits, y)
    grad = dlogits / n
    weight_grads: list[np.ndarray] = [None] * len(net.layers)  # type: ignore[list-item]
    bias_grads: list[np.ndarray] = [None] * len(net.layers)  # type: ignore[list-item]
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        gw, gb, grad = dense_backward(
            cache.activations[i], layer.weights, cache.activations[i + 1], grad, layer.relu
        )
        weight_grads[i] = gw
        bias_grads[i] = gb
    bwd = int(round(backward_multiplier * fwd))
    return losses, GradientSet(weight_grads, bias_grads), PassMacs(fwd, bwd)


def sgd_step(net: Network, grads: GradientSet, lr: float) -> Network:
    """In-place w <- w - lr*g on every layer; returns the same Network."""
    if len(grads.weight_grads) != len(net.layers):
        raise ValueError(
            f"gradient set has {len(grads.weight_grads)} layers, network has {len(net.layers)}"
        )
    for layer, gw, gb in zip(net.layers, grads.weight_grads, grads.bias_grads):
        if gw.shape != layer.weights.shape or gb.shape != layer.bias.shape:
            raise ValueError("gradient shapes do not match network shapes")
        layer.weights -= lr * gw
        layer.bias -= lr * gb
    return net


def last_layer_grad_norm(grads: GradientSet) -> float:
    """L2 norm of the last layer's weight gradient."""
    if not grads.weight_grads:
        raise ValueError("empty gradient set")
    return float(np.linalg.norm(grads.weight_grads[-1]))


def eval_losses(net: Network, x: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, int]:
    """Per-sample losses without a backward pass. Returns (losses, forward MACs)."""
    logits, _, macs = forward(net, x)
    y = _check_labels(y, logits.shape[1], logits.shape[0])
    losses, _ = softmax_xent(logits, y)
    return losses, macs


def per_sample_last_grad_norms(
    net: Network, x: np.ndarray, y: np.ndarray
) -> tuple[np.ndarray, int]:
    """L2 norm of each sample's own loss gradient w.r.t. the last layer's weights.

    That gradient is the outer product of the last layer's input h_i with
    (softmax(logits_i) - onehot(y_i)), so its Frobenius norm is
    ||h_i|| * ||delta_i||; no backward pass is needed. Returns (norms,
    forward MACs).
    """
    logits, cache, macs = forward(net, x)
    y = _check_labels(y, logits.shape[1], logits.shape[0])
    _, dlogits = softmax_xent(logits, y)
    h = cache.activations[-2]
    norms = np.linalg.norm(h, axis=1) * np.linalg.norm(dlogits, axis=1)
    return norms, macs


def losses_and_grad_norms(
    net: Network, x: np.ndarray, y: np.ndarray
) -> tuple[np.ndarray, np.ndarray, int]:
    """Per-sample losses and last-layer gradient norms from one shared
    forward pass, so scoring a batch for selection costs a single
    forward. Returns (losses, norms, forward MACs)."""
    logits, cache, macs = forward(net, x)
    y = _check_labels(y, logits.shape[1], logits.shape[0])
    losses, dlogits = softmax_xent(logits, y)
    h = cache.activations[-2]
    norms = np.linalg.norm(h, axis=1) * np.linalg.norm(dlogits, axis=1)
    return losses, norms, macs


def accuracy(net: Network, x: np.ndarray, y: np.ndarray) -> float:
    """Fraction of argmax predictions matching y. Not metered: evaluation
    happens outside the device cost model."""
    logits, _, _ = forward(net, x)
    return float(np.mean(np.argmax(logits, axis=1) == np.asarray(y)))
