# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels for dense-layer training.

Same call surface as ``kernels_py``; one of the two is picked at import
time by ``fedtier._backend``. Inputs must be C-contiguous float64 (labels
int64); callers guarantee that.
"""
from libc.math cimport exp, log

import numpy as np


def dense_forward(double[:, ::1] x, double[:, ::1] w, double[::1] b, bint relu):
    """Affine transform plus optional ReLU: act(x @ w + b)."""
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t d_in = x.shape[1]
    cdef Py_ssize_t d_out = w.shape[1]
    out_arr = np.empty((n, d_out), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, j, k
    cdef double xik
    for i in range(n):
        for j in range(d_out):
            out[i, j] = b[j]
        for k in range(d_in):
            xik = x[i, k]
            for j in range(d_out):
                out[i, j] += xik * w[k, j]
        if relu:
            for j in range(d_out):
                if out[i, j] < 0.0:
                    out[i, j] = 0.0
    return out_arr


def dense_backward(double[:, ::1] x, double[:, ::1] w, double[:, ::1] act,
                   double[:, ::1] grad_out, bint relu):
    """Gradients of one dense layer.

    ``act`` is the layer's forward output (used for the ReLU mask).
    Returns (grad_w, grad_b, grad_x) for upstream gradient ``grad_out``.
    """
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t d_in = x.shape[1]
    cdef Py_ssize_t d_out = w.shape[1]
    dz_arr = np.empty((n, d_out), dtype=np.float64)
    gw_arr = np.zeros((d_in, d_out), dtype=np.float64)
    gb_arr = np.zeros(d_out, dtype=np.float64)
    gx_arr = np.zeros((n, d_in), dtype=np.float64)
    cdef double[:, ::1] dz = dz_arr
    cdef double[:, ::1] gw = gw_arr
    cdef double[::1] gb = gb_arr
    cdef double[:, ::1] gx = gx_arr
    cdef Py_ssize_t i, j, k
    cdef double dzij, xik
    for i in range(n):
        for j in range(d_out):
            dzij = grad_out[i, j]
            if relu and act[i, j] <= 0.0:
                dzij = 0.0
            dz[i, j] = dzij
            gb[j] += dzij
    for i in range(n):
        for k in range(d_in):
            xik = x[i, k]
            for j in range(d_out):
                gw[k, j] += xik * dz[i, j]
    for i in range(n):
        for k in range(d_in):
            for j in range(d_out):
                gx[i, k] += dz[i, j] * w[k, j]
    return gw_arr, gb_arr, gx_arr


def softmax_xent(double[:, ::1] logits, long long[::1] labels):
    """Per-sample softmax cross-entropy.

    Returns (losses, dlogits) where dlogits[i] = softmax(logits[i]) - onehot(labels[i]),
    i.e. the unscaled per-sample gradient with respect to the logits.
    """
    cdef Py_ssize_t n = logits.shape[0]
    cdef Py_ssize_t z = logits.shape[1]
    losses_arr = np.empty(n, dtype=np.float64)
    dlog_arr = np.empty((n, z), dtype=np.float64)
    cdef double[::1] losses = losses_arr
    cdef double[:, ::1] dlog = dlog_arr
    cdef Py_ssize_t i, j
    cdef double m, s, p
    for i in range(n):
        m = logits[i, 0]
        for j in range(1, z):
            if logits[i, j] > m:
                m = logits[i, j]
        s = 0.0
        for j in range(z):
            s += exp(logits[i, j] - m)
        losses[i] = log(s) - (logits[i, labels[i]] - m)
        for j in range(z):
            p = exp(logits[i, j] - m) / s
            dlog[i, j] = p
        dlog[i, labels[i]] -= 1.0
    return losses_arr, dlog_arr
