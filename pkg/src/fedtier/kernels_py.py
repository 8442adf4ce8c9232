"""Pure-numpy reference kernels.

Mirrors the compiled module ``fedtier._kernels``. The two backends agree
to floating-point roundoff (BLAS may reorder accumulations), and each
backend is individually deterministic: same inputs, same bits out.
"""
from __future__ import annotations

import numpy as np


def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray, relu: bool) -> np.ndarray:
    """Affine transform plus optional ReLU: act(x @ w + b)."""
    out = x @ w + b
    if relu:
        np.maximum(out, 0.0, out=out)
    return out


def dense_backward(
    x: np.ndarray,
    w: np.ndarray,
    act: np.ndarray,
    grad_out: np.ndarray,
    relu: bool,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of one dense layer.

    ``act`` is the layer's forward output (used for the ReLU mask).
    Returns (grad_w, grad_b, grad_x) for upstream gradient ``grad_out``.
    """
    if relu:
        dz = np.where(act > 0.0, grad_out, 0.0)
    else:
        dz = grad_out
    grad_w = x.T @ dz
    grad_b = dz.sum(axis=0)
    grad_x = dz @ w.T
    return grad_w, grad_b, grad_x


def softmax_xent(logits: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-sample softmax cross-entropy.

    Returns (losses, dlogits) where dlogits[i] = softmax(logits[i]) - onehot(labels[i]),
    i.e. the unscaled per-sample gradient with respect to the logits.
    """
    m = logits.max(axis=1, keepdims=True)
    shifted = logits - m
    e = np.exp(shifted)
    s = e.sum(axis=1)
    n = logits.shape[0]
    losses = np.log(s) - shifted[np.arange(n), labels]
    dlogits = e / s[:, None]
    dlogits[np.arange(n), labels] -= 1.0
    return losses, dlogits
