"""Pure-numpy implementations of the hot row-wise kernels.

These are the reference semantics; `_kernels_numba` mirrors them loop-for-loop.
All inputs are 2-d float64 arrays, one example per row.
"""

import numpy as np


def row_norms(x):
    """Euclidean norm of every row."""
    return np.sqrt(np.einsum("ij,ij->i", x, x))


def normalize_rows(g, c, e):
    """Rescale each row to c * g_i / (|g_i| + e).

    A row with |g_i| + e == 0 comes back as zeros; the caller decides
    whether that case is an error.
    """
    denom = row_norms(g) + e
    safe = np.where(denom == 0.0, 1.0, denom)
    out = g * (c / safe)[:, None]
    out[denom == 0.0] = 0.0
    return out


def clip_rows(g, c):
    """Rescale each row by min(1, c / |g_i|); zero rows pass through."""
    norms = row_norms(g)
    scale = np.ones_like(norms)
    big = norms > c
    scale[big] = c / norms[big]
    return g * scale[:, None]


def softmax_rows(x):
    """Row-wise softmax with max-shift for stability."""
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax_rows(x):
    """Row-wise log-softmax via the shifted log-sum-exp."""
    shifted = x - x.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax_xent(logits, targets):
    """Mean cross-entropy between softmax(logits) and target rows.

    Returns (loss, grad) where grad = (softmax(logits) - targets) / batch.
    """
    b = logits.shape[0]
    logp = log_softmax_rows(logits)
    loss = -(targets * logp).sum() / b
    grad = (softmax_rows(logits) - targets) / b
    return loss, grad
