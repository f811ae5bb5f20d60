"""Shared nonlinear feature embedding: one dense layer with LeakyReLU."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class EmbeddingParams:
    W: np.ndarray          # (M, D)
    b: np.ndarray          # (M,)
    beta: float = 0.2      # LeakyReLU negative slope, in (0, 1)

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        if self.W.ndim != 2 or self.b.ndim != 1 or self.W.shape[0] != self.b.shape[0]:
            raise ValueError("W must be (M, D) and b (M,)")
        if not (np.isfinite(self.W).all() and np.isfinite(self.b).all()):
            raise ValueError("embedding parameters must be finite")
        if not 0.0 < self.beta < 1.0:
            raise ValueError("beta must lie in (0, 1)")

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]


def embedding_dim(n_features: int) -> int:
    """Embedding width used for a given input dimensionality."""
    if n_features < 1:
        raise ValueError("feature count must be >= 1")
    return 72 if n_features <= 200 else 128


def init_embedding(n_features: int, out_dim: int | None = None,
                   beta: float = 0.2, seed: int = 0) -> EmbeddingParams:
    """Glorot-uniform weights, zero bias."""
    m = embedding_dim(n_features) if out_dim is None else out_dim
    bound = np.sqrt(6.0 / (n_features + m))
    rng = np.random.default_rng(seed)
    w = rng.uniform(-bound, bound, size=(m, n_features))
    return EmbeddingParams(w, np.zeros(m), beta)


def embed(p: EmbeddingParams, x: np.ndarray) -> np.ndarray:
    """LeakyReLU(W x + b) for a single D-vector or an (N, D) batch."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != p.in_dim:
        raise ValueError(f"input has {x.shape[-1]} features, expected {p.in_dim}")
    z = x @ p.W.T + p.b
    return np.where(z >= 0.0, z, p.beta * z)


def embed_backward(p: EmbeddingParams, x: np.ndarray, grad_e: np.ndarray):
    """Gradients of ``embed`` w.r.t. W, b, and x.

    Accepts a single vector or a batch; batch contributions to grad_W and
    grad_b are summed. The subgradient at a pre-activation of exactly 0 is
    taken from the positive branch (slope 1).
    """
    x = np.asarray(x, dtype=np.float64)
    grad_e = np.asarray(grad_e, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    gb = grad_e[None, :] if single else grad_e
    if xb.shape[1] != p.in_dim or gb.shape[1] != p.out_dim or xb.shape[0] != gb.shape[0]:
        raise ValueError("inconsistent shapes in embed_backward")
    z = xb @ p.W.T + p.b
    slope = np.where(z >= 0.0, 1.0, p.beta)
    gz = gb * slope
    grad_w = gz.T @ xb
    grad_b = gz.sum(axis=0)
    grad_x = gz @ p.W
    return grad_w, grad_b, (grad_x[0] if single else grad_x)
