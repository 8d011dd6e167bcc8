"""Numba-compiled versions of the hot row-wise kernels.

Same contracts as `_kernels_numpy`. Compiled without fastmath so results
stay IEEE-compliant and reproducible run to run; loops are fused per row
to avoid the temporaries the numpy path allocates.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def row_norms(x):
    b, n = x.shape
    out = np.empty(b)
    for i in range(b):
        s = 0.0
        for j in range(n):
            s += x[i, j] * x[i, j]
        out[i] = np.sqrt(s)
    return out


@njit(cache=True)
def normalize_rows(g, c, e):
    b, n = g.shape
    out = np.empty((b, n))
    for i in range(b):
        s = 0.0
        for j in range(n):
            s += g[i, j] * g[i, j]
        denom = np.sqrt(s) + e
        if denom == 0.0:
            for j in range(n):
                out[i, j] = 0.0
        else:
            f = c / denom
            for j in range(n):
                out[i, j] = g[i, j] * f
    return out


@njit(cache=True)
def clip_rows(g, c):
    b, n = g.shape
    out = np.empty((b, n))
    for i in range(b):
        s = 0.0
        for j in range(n):
            s += g[i, j] * g[i, j]
        norm = np.sqrt(s)
        f = c / norm if norm > c else 1.0
        for j in range(n):
            out[i, j] = g[i, j] * f
    return out


@njit(cache=True)
def softmax_rows(x):
    b, n = x.shape
    out = np.empty((b, n))
    for i in range(b):
        m = x[i, 0]
        for j in range(1, n):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(n):
            v = np.exp(x[i, j] - m)
            out[i, j] = v
            s += v
        for j in range(n):
            out[i, j] /= s
    return out


@njit(cache=True)
def log_softmax_rows(x):
    b, n = x.shape
    out = np.empty((b, n))
    for i in range(b):
        m = x[i, 0]
        for j in range(1, n):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(n):
            s += np.exp(x[i, j] - m)
        lse = np.log(s)
        for j in range(n):
            out[i, j] = x[i, j] - m - lse
    return out


@njit(cache=True)
def softmax_xent(logits, targets):
    b, n = logits.shape
    grad = np.empty((b, n))
    loss = 0.0
    for i in range(b):
        m = logits[i, 0]
        for j in range(1, n):
            if logits[i, j] > m:
                m = logits[i, j]
        s = 0.0
        for j in range(n):
            s += np.exp(logits[i, j] - m)
        lse = np.log(s)
        for j in range(n):
            logp = logits[i, j] - m - lse
            loss -= targets[i, j] * logp
            grad[i, j] = (np.exp(logp) - targets[i, j]) / b
    return loss / b, grad
