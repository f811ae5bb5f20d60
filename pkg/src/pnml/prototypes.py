"""Positive/negative prototype generation per label.

Two strategies: a single prototype per component (the mean embedding), or an
adaptive infinite-mixture scheme that spawns a new prototype whenever an
embedding sits farther than a threshold from every existing one, then
softly reassigns all embeddings and recomputes the means.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClusteringConfig:
    alpha: float = 0.1          # concentration; smaller -> higher threshold
    sigma: float = 1.0          # within-cluster variance (trainable upstream)
    rho: float = 1.0            # base-distribution spread; 0 collapses the denominator
    ite_clustering: int = 3
    lambda_floor: float = 1e-6  # guard against non-positive thresholds

    def __post_init__(self):
        if min(self.alpha, self.sigma, self.lambda_floor) <= 0 or self.rho < 0:
            raise ValueError("alpha, sigma, lambda_floor must be positive and rho >= 0")
        if self.ite_clustering < 1:
            raise ValueError("ite_clustering must be >= 1")


@dataclass
class LabelPrototypes:
    """Prototype vectors for one label; None marks an absent component."""

    pos: np.ndarray | None  # (C+, M)
    neg: np.ndarray | None  # (C-, M)


@dataclass
class PrototypeSet:
    by_label: list[LabelPrototypes]

    def __len__(self) -> int:
        return len(self.by_label)

    def __getitem__(self, k: int) -> LabelPrototypes:
        return self.by_label[k]


def _weighted_means(z: np.ndarray, embeddings: np.ndarray) -> np.ndarray:
    # columns of z must have positive mass
    zt = np.ascontiguousarray(z.T)
    return (zt @ embeddings) / zt.sum(axis=1, keepdims=True)


def single_prototype(embeddings) -> np.ndarray:
    """Arithmetic mean of a non-empty list of embedding vectors."""
    e = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    if e.size == 0:
        raise ValueError("cannot build a prototype from an empty embedding set")
    return _weighted_means(np.ones((e.shape[0], 1)), e)[0]


def distance_threshold(cfg: ClusteringConfig, dim: int) -> float:
    """New-prototype distance threshold lambda.

    lambda = -2 sigma log(alpha / (1 + rho/sigma)^(dim/2)). May be
    non-positive for large alpha; consumers clamp to ``cfg.lambda_floor``.
    """
    return float(-2.0 * cfg.sigma
                 * np.log(cfg.alpha / (1.0 + cfg.rho / cfg.sigma) ** (dim / 2.0)))


def _softmax_rows_of_neg(d: np.ndarray) -> np.ndarray:
    # softmax over -d along axis 1, shift-stabilized
    m = d.min(axis=1, keepdims=True)
    w = np.exp(m - d)
    return w / w.sum(axis=1, keepdims=True)


def soft_assign(e: np.ndarray, prototypes, dist) -> np.ndarray:
    """Membership probabilities of one embedding over a prototype list.

    ``dist(points, centers)`` must return the pairwise distance matrix.
    """
    mu = np.atleast_2d(np.asarray(prototypes, dtype=np.float64))
    if mu.shape[0] == 0:
        raise ValueError("prototype list is empty")
    d = np.asarray(dist(np.asarray(e, dtype=np.float64)[None, :], mu))
    return _softmax_rows_of_neg(d)[0]


def adaptive_prototypes(embeddings, cfg: ClusteringConfig, dist,
                        threshold: float | None = None,
                        return_weights: bool = False,
                        _accelerated: bool = True):
    """Infinite-mixture prototype generation for one component.

    Starts from the component mean. For each embedding in input order: if
    its distance to every current prototype exceeds the threshold, a new
    prototype is created at that embedding; afterwards all embeddings are
    softly reassigned and every mean is recomputed as its z-weighted
    average. The scan is repeated ``cfg.ite_clustering`` times.

    Args:
        embeddings: (n, M) array-like, n >= 1.
        cfg: clustering knobs; ``cfg.sigma`` is the variance entering the
            threshold formula.
        dist: pairwise distance function ``dist(points, centers) -> (n, c)``,
            typically the label's current squared Mahalanobis divergence.
        threshold: explicit threshold override (e.g. ``np.inf`` to force a
            single prototype); defaults to :func:`distance_threshold`.
        return_weights: also return the final (n, C) assignment weight
            matrix whose columns are normalized (each prototype is the
            corresponding convex combination of the embeddings).
        _accelerated: fast-forward through scan positions while the means
            are numerically stationary (relative movement below 1e-13 per
            update), which perturbs results only at that scale; an exactly
            stationary state (e.g. a single forced prototype) is skipped
            with zero error. Disabled by equivalence tests.

    Returns:
        (C, M) prototype array, or ``(prototypes, weights)``.
    """
    e = np.atleast_2d(np.asarray(embeddings, dtype=np.float64))
    n, dim = e.shape
    if n == 0:
        raise ValueError("cannot cluster an empty embedding set")
    lam = distance_threshold(cfg, dim) if threshold is None else float(threshold)
    if lam < cfg.lambda_floor:
        log.warning("distance threshold %.3g below floor, clamping to %.3g "
                    "(alpha too large?)", lam, cfg.lambda_floor)
        lam = cfg.lambda_floor

    mu = single_prototype(e)[None, :]
    z = np.ones((n, 1))
    stationary = False  # mean updates have stopped moving
    for _ in range(cfg.ite_clustering):
        i = 0
        while i < n:
            d_full = np.asarray(dist(e, mu))
            if stationary and _accelerated:
                # updates are no-ops until a creation fires; jump to the
                # first remaining embedding beyond the threshold, if any
                creators = np.flatnonzero(d_full[i:].min(axis=1) > lam)
                if creators.size == 0:
                    break
                i += int(creators[0])
            created = d_full[i].min() > lam
            if created:
                mu = np.vstack([mu, e[i]])
                d_full = np.hstack([d_full, np.asarray(dist(e, mu[-1:]))])
            z = _softmax_rows_of_neg(d_full)
            zt = np.ascontiguousarray(z.T)
            num = zt @ e
            mass = zt.sum(axis=1)
            dead = mass == 0.0
            if dead.any():
                # a prototype nobody reaches keeps its position
                num[dead] = mu[dead]
                mass[dead] = 1.0
            new_mu = num / mass[:, None]
            if created:
                stationary = False
            else:
                delta = np.abs(new_mu - mu).max()
                stationary = delta <= 1e-13 * max(np.abs(mu).max(), 1e-300)
            mu = new_mu
            i += 1
    if return_weights:
        cs = z.sum(axis=0, keepdims=True)
        w = np.divide(z, cs, out=np.zeros_like(z), where=cs > 0)
        return mu, w
    return mu


def export_prototypes(path, protos: PrototypeSet, label_names=None) -> None:
    """Write all prototypes as tab-separated rows for external plotting.

    Columns: label index, label name, polarity, coordinates..., warning.
    Labels lacking a positive component contribute no positive rows; their
    negative rows carry a warning flag.
    """
    with open(path, "w") as f:
        for k, lp in enumerate(protos.by_label):
            name = label_names[k] if label_names else str(k)
            warning = "" if lp.pos is not None else "no-positive-prototypes"
            for polarity, block in (("pos", lp.pos), ("neg", lp.neg)):
                if block is None:
                    continue
                for vec in np.atleast_2d(block):
                    coords = "\t".join(repr(float(v)) for v in vec)
                    f.write(f"{k}\t{name}\t{polarity}\t{coords}\t{warning}\n")
