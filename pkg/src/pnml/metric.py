"""Per-label learned Mahalanobis distances and their Frobenius regularizer."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class DistanceMetricParams:
    """One full M x M transform per label; distance is ||U_k (e - mu)||."""

    U: list[np.ndarray]

    def __post_init__(self):
        self.U = [np.asarray(u, dtype=np.float64) for u in self.U]
        for u in self.U:
            if u.ndim != 2 or u.shape[0] != u.shape[1]:
                raise ValueError("each U_k must be square")
            if not np.isfinite(u).all():
                raise ValueError("U_k entries must be finite")

    @property
    def n_labels(self) -> int:
        return len(self.U)


def identity_metrics(n_labels: int, dim: int) -> DistanceMetricParams:
    return DistanceMetricParams([np.eye(dim) for _ in range(n_labels)])


def _diff(u, e, mu):
    e = np.asarray(e, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    if e.shape != mu.shape or e.shape[-1] != u.shape[1]:
        raise ValueError("dimension mismatch in Mahalanobis distance")
    return e - mu


def squared_mahalanobis(u: np.ndarray, e: np.ndarray, mu: np.ndarray) -> float:
    """(e-mu)^T U^T U (e-mu); smooth in all arguments."""
    v = np.asarray(u) @ _diff(u, e, mu)
    return float(v @ v)


def mahalanobis(u: np.ndarray, e: np.ndarray, mu: np.ndarray) -> float:
    """||U (e - mu)||_2."""
    return float(np.sqrt(squared_mahalanobis(u, e, mu)))


def pairwise_squared_mahalanobis(u: np.ndarray, points: np.ndarray,
                                 centers: np.ndarray) -> np.ndarray:
    """All squared distances between rows of ``points`` and ``centers``.

    Returns an (n, c) matrix; clamped at 0 to absorb cancellation error.
    """
    pu = np.atleast_2d(points) @ u.T
    cu = np.atleast_2d(centers) @ u.T
    sq = (pu * pu).sum(axis=1)[:, None] + (cu * cu).sum(axis=1)[None, :] \
        - 2.0 * pu @ cu.T
    return np.maximum(sq, 0.0)


def euclidean_pairs(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Squared Euclidean pairwise distances (identity transform)."""
    p = np.atleast_2d(points)
    c = np.atleast_2d(centers)
    d = p[:, None, :] - c[None, :, :]
    return (d * d).sum(axis=2)


def mahalanobis_pairs(u: np.ndarray, power: int = 2):
    """Pairwise distance function under U, squared (power 2) or not (1).

    The returned callable caches the U-projection of the most recent
    ``points`` array (by identity), since clustering reuses one fixed
    point set against many center updates.
    """
    if power not in (1, 2):
        raise ValueError("distance power must be 1 or 2")
    cache: dict = {}

    def dist(points, centers):
        points = np.atleast_2d(points)
        if cache.get("id") == id(points) and cache.get("shape") == points.shape:
            pu = cache["pu"]
        else:
            pu = points @ u.T
            cache.update(id=id(points), shape=points.shape, pu=pu,
                         keepalive=points)
        cu = np.atleast_2d(centers) @ u.T
        sq = (pu * pu).sum(axis=1)[:, None] + (cu * cu).sum(axis=1)[None, :] \
            - 2.0 * pu @ cu.T
        sq = np.maximum(sq, 0.0)
        return sq if power == 2 else np.sqrt(sq)

    return dist


def squared_mahalanobis_backward(u: np.ndarray, e: np.ndarray, mu: np.ndarray,
                                 grad_d: float = 1.0):
    """Gradients of squared_mahalanobis w.r.t. (U, e, mu)."""
    d = _diff(u, e, mu)
    ud = u @ d
    grad_u = 2.0 * grad_d * np.outer(ud, d)
    grad_e = 2.0 * grad_d * (u.T @ ud)
    return grad_u, grad_e, -grad_e


def batched_squared_mahalanobis_backward(u: np.ndarray, points: np.ndarray,
                                         centers: np.ndarray,
                                         grad_d: np.ndarray):
    """Backward pass for pairwise_squared_mahalanobis.

    ``grad_d`` is (n, c) of upstream gradients; returns gradients w.r.t.
    U, points (n, M), and centers (c, M).
    """
    n, c = grad_d.shape
    m = points.shape[1]
    diff = (points[:, None, :] - centers[None, :, :]).reshape(n * c, m)
    weighted = grad_d.reshape(-1, 1) * diff
    gdiff = (2.0 * weighted @ (u.T @ u)).reshape(n, c, m)
    grad_points = gdiff.sum(axis=1)
    grad_centers = -gdiff.sum(axis=0)
    grad_u = 2.0 * u @ (weighted.T @ diff)
    return grad_u, grad_points, grad_centers


def metric_regularizer(params: DistanceMetricParams) -> float:
    """Sum of squared Frobenius norms over all labels."""
    return float(sum((u * u).sum() for u in params.U))


def metric_regularizer_grad(params: DistanceMetricParams) -> list[np.ndarray]:
    return [2.0 * u for u in params.U]
