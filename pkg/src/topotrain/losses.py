"""Classification losses with their gradients w.r.t. logits.

Every function returns the batch-mean value followed by gradient arrays.
"""
from __future__ import annotations

import numpy as np

from .numerics import log_softmax_rows, softmax_rows


def _check_labels(logits: np.ndarray, y: np.ndarray) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != logits.shape[0]:
        raise ValueError("labels must be a vector with one entry per row of logits")
    if y.size and (y.min() < 0 or y.max() >= logits.shape[1]):
        raise ValueError("label out of range")
    return y.astype(np.intp)


def cross_entropy(logits: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient ``(softmax - onehot) / n``."""
    y = _check_labels(logits, y)
    n = logits.shape[0]
    logp = log_softmax_rows(logits)
    value = -logp[np.arange(n), y].mean()
    grad = np.exp(logp)
    grad[np.arange(n), y] -= 1.0
    return float(value), grad / n


def kl_divergence(target_logits: np.ndarray, logits: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Batch-mean ``KL(softmax(target_logits) || softmax(logits))``.

    Returns ``(value, grad_target_logits, grad_logits)``.
    """
    if target_logits.shape != logits.shape:
        raise ValueError("logit shapes differ")
    n = logits.shape[0]
    logp = log_softmax_rows(target_logits)
    logq = log_softmax_rows(logits)
    p = np.exp(logp)
    a = logp - logq
    per_row = (p * a).sum(axis=1)
    g_target = p * (a - per_row[:, None]) / n
    g_logits = (np.exp(logq) - p) / n
    return float(per_row.mean()), g_target, g_logits


def predict(logits: np.ndarray) -> np.ndarray:
    """Argmax class; ties go to the lowest index."""
    return np.argmax(logits, axis=1)


__all__ = ["cross_entropy", "kl_divergence", "predict", "softmax_rows"]
