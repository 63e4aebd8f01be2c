"""Scalar losses returning (value, gradient w.r.t. prediction)."""

from __future__ import annotations

import numpy as np

from tracer.engine.layers import softmax


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    n = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    value = -logp[np.arange(n), labels].mean()
    grad = softmax(logits, axis=1)
    grad[np.arange(n), labels] -= 1.0
    return float(value), grad / n


def bce_with_logits(logits: np.ndarray, targets: np.ndarray | float) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy on raw scores."""
    t = np.broadcast_to(np.asarray(targets, dtype=np.float64), logits.shape)
    # log(1 + exp(-|z|)) form for stability
    value = np.maximum(logits, 0) - logits * t + np.log1p(np.exp(-np.abs(logits)))
    sig = 0.5 * (1.0 + np.tanh(0.5 * logits))
    return float(value.mean()), (sig - t) / logits.size


def distance(a: np.ndarray, b: np.ndarray, metric: str = "l2",
             eps: float = 1e-12) -> tuple[float, np.ndarray]:
    """Mean per-row l1 or l2 distance between ``a`` and ``b``; gradient w.r.t. ``a``."""
    n = a.shape[0]
    diff = (a - b).reshape(n, -1)
    if metric == "l2":
        norms = np.sqrt((diff**2).sum(axis=1) + eps)
        grad = diff / norms[:, None]
    elif metric == "l1":
        norms = np.abs(diff).sum(axis=1)
        grad = np.sign(diff)
    else:
        raise ValueError(f"unknown metric '{metric}' (expected l1 or l2)")
    return float(norms.mean()), (grad / n).reshape(a.shape)
