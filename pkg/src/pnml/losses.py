"""Prediction probabilities and the composite training loss.

A query's probability of carrying a label is the ratio of the average
exp(-distance) mass over the label's positive prototypes to the total mass
over both polarities. Everything is computed through log-sum-exp so large
distances degrade gracefully instead of underflowing to 0/0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .metric import pairwise_squared_mahalanobis
from .prototypes import LabelPrototypes, PrototypeSet

PROB_EPS = 1e-7  # cross-entropy probability clamp


@dataclass(frozen=True)
class LossBreakdown:
    L_e: float
    L_m: float
    L_c: float
    L_all: float
    lambda1: float
    lambda2: float


def loss_breakdown(l_e: float, l_m: float, l_c: float,
                   lambda1: float, lambda2: float) -> LossBreakdown:
    return LossBreakdown(l_e, l_m, l_c,
                         total_loss(l_e, l_m, l_c, lambda1, lambda2),
                         lambda1, lambda2)


def total_loss(l_e: float, l_m: float, l_c: float,
               lambda1: float, lambda2: float) -> float:
    if lambda1 < 0 or lambda2 < 0:
        raise ValueError("tradeoff weights must be non-negative")
    return float(l_e + lambda1 * l_m + lambda2 * l_c)


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    m = a.max(axis=axis, keepdims=True)
    out = m + np.log(np.exp(a - m).sum(axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def label_probabilities(d_pos: np.ndarray, d_neg: np.ndarray):
    """Positive-class probabilities from per-polarity distance matrices.

    Args:
        d_pos: (n, C+) distances from each query to the positive prototypes.
        d_neg: (n, C-) distances to the negative prototypes.

    Returns:
        (p, cache) where p is (n,) and cache feeds
        :func:`label_probabilities_backward`.
    """
    d_pos = np.atleast_2d(d_pos)
    d_neg = np.atleast_2d(d_neg)
    if d_pos.shape[1] == 0 or d_neg.shape[1] == 0:
        raise ValueError("both prototype sets must be non-empty")
    log_a_pos = _logsumexp(-d_pos, axis=1) - np.log(d_pos.shape[1])
    log_a_neg = _logsumexp(-d_neg, axis=1) - np.log(d_neg.shape[1])
    log_z = np.logaddexp(log_a_pos, log_a_neg)
    p = np.exp(log_a_pos - log_z)
    return p, (d_pos, d_neg, log_z, p)


def label_probabilities_backward(grad_p: np.ndarray, cache):
    """Gradients of the probabilities w.r.t. both distance matrices."""
    d_pos, d_neg, log_z, p = cache
    w_pos = np.exp(-d_pos - np.log(d_pos.shape[1]) - log_z[:, None])
    w_neg = np.exp(-d_neg - np.log(d_neg.shape[1]) - log_z[:, None])
    g = np.asarray(grad_p)
    grad_d_pos = -(g * (1.0 - p))[:, None] * w_pos
    grad_d_neg = (g * p)[:, None] * w_neg
    return grad_d_pos, grad_d_neg


def predict_label_prob(e: np.ndarray, protos_k: LabelPrototypes,
                       u: np.ndarray, power: int = 2) -> float:
    """Probability that a single embedded query carries label k."""
    if protos_k.pos is None or protos_k.neg is None:
        raise ValueError("label needs both positive and negative prototypes")
    e = np.asarray(e, dtype=np.float64)[None, :]
    d_pos = pairwise_squared_mahalanobis(u, e, protos_k.pos)
    d_neg = pairwise_squared_mahalanobis(u, e, protos_k.neg)
    if power == 1:
        d_pos, d_neg = np.sqrt(d_pos), np.sqrt(d_neg)
    p, _ = label_probabilities(d_pos, d_neg)
    return float(p[0])


def cross_entropy(probabilities: np.ndarray, labels: np.ndarray,
                  eps: float = PROB_EPS) -> float:
    """Summed binary cross-entropy with probabilities clamped to [eps, 1-eps]."""
    p = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {y.shape}")
    pc = np.clip(p, eps, 1.0 - eps)
    return float(-(y * np.log(pc) + (1.0 - y) * np.log1p(-pc)).sum())


def cross_entropy_grad(probabilities: np.ndarray, labels: np.ndarray,
                       eps: float = PROB_EPS) -> np.ndarray:
    """d cross_entropy / d p; zero where the clamp is active."""
    p = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    pc = np.clip(p, eps, 1.0 - eps)
    inside = (p > eps) & (p < 1.0 - eps)
    return np.where(inside, -y / pc + (1.0 - y) / (1.0 - pc), 0.0)


def positive_prototype_means(protos: PrototypeSet):
    """Mean positive prototype per label; (present_mask, (K, M) matrix).

    Labels without a positive component get a zero row and a False mask.
    """
    dim = next((lp.pos.shape[1] for lp in protos.by_label if lp.pos is not None),
               None)
    if dim is None:
        raise ValueError("no label has positive prototypes")
    present = np.array([lp.pos is not None for lp in protos.by_label])
    means = np.zeros((len(protos.by_label), dim))
    for k, lp in enumerate(protos.by_label):
        if lp.pos is not None:
            means[k] = lp.pos.mean(axis=0)
    return present, means


def correlation_regularizer(protos: PrototypeSet, corr) -> float:
    """Pairwise inner-product penalty weighted by (1 - label correlation).

    Sums over all ordered label pairs; labels without positive prototypes
    are skipped.
    """
    present, means = positive_prototype_means(protos)
    c = np.asarray(corr.c if hasattr(corr, "c") else corr, dtype=np.float64)
    b = (1.0 - c) * np.outer(present, present)
    return float(0.5 * (b * (means @ means.T)).sum())


def correlation_regularizer_mean_grad(protos: PrototypeSet, corr) -> np.ndarray:
    """d L_c / d (mean positive prototype), one (M,) row per label."""
    present, means = positive_prototype_means(protos)
    c = np.asarray(corr.c if hasattr(corr, "c") else corr, dtype=np.float64)
    b = (1.0 - c) * np.outer(present, present)
    return b @ means


def predict_labels(probabilities: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Bipartition by strict threshold; ties resolve negative."""
    return (np.asarray(probabilities) > threshold).astype(np.int8)
