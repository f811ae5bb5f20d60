"""End-to-end training: sampling, forward pass, analytic backprop, Adam.

Each iteration draws per-label instance pools, rebuilds that label's
positive/negative prototypes from the current embeddings, scores a query
mini-batch against them, and takes one Adam step on the summed loss
(cross-entropy + metric and correlation regularizers).

Gradient flow through the adaptive clustering treats the discrete creation
events and the soft assignment weights as constants of the iteration:
prototypes are differentiated only as fixed convex combinations of the pool
embeddings. The cluster-variance parameter therefore receives no gradient
and is kept as a tunable knob.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .datasets import Dataset, SamplingConfig, derive_seed, label_correlation_matrix, sample_label_instances
from .embedding import EmbeddingParams, embed, embed_backward, embedding_dim, init_embedding
from .losses import (cross_entropy, cross_entropy_grad, label_probabilities,
                     label_probabilities_backward, loss_breakdown, LossBreakdown,
                     correlation_regularizer_mean_grad, correlation_regularizer,
                     positive_prototype_means, predict_labels)
from .metric import (DistanceMetricParams, batched_squared_mahalanobis_backward,
                     identity_metrics, mahalanobis_pairs, metric_regularizer,
                     pairwise_squared_mahalanobis)
from .prototypes import (ClusteringConfig, LabelPrototypes, PrototypeSet,
                         adaptive_prototypes, single_prototype)

MODES = ("single", "multiple", "ablation-i", "ablation-d")
_SQRT_GUARD = 1e-30  # keeps the non-squared distance differentiable at 0


class TrainingDivergenceError(RuntimeError):
    """Raised when the loss stops being finite."""


@dataclass(frozen=True)
class Hyperparams:
    mode: str = "single"
    M: int | None = None          # embedding width; None derives it from D
    beta: float = 0.2
    alpha: float = 0.1
    sigma: float = 1.0            # initial cluster variance (no gradient reaches it)
    lambda1: float = 1e-6
    lambda2: float = 1e-6
    rho: float = 1.0
    ite_clustering: int = 3
    r_pos: float = 1.0
    r_neg: float = 1.0
    batch_size: int = 128
    epochs: int = 40
    learning_rate: float = 1e-3
    seed: int = 0
    distance_power: int = 2
    standardize: bool = False  # opt-in per-fold feature z-scoring

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda1 and lambda2 must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.distance_power not in (1, 2):
            raise ValueError("distance_power must be 1 or 2")
        if self.M is not None and self.M < 1:
            raise ValueError("M must be >= 1")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        SamplingConfig(self.r_pos, self.r_neg, 0)  # validate rates

    @property
    def adaptive(self) -> bool:
        return self.mode != "single"

    def clustering_config(self, sigma: float) -> ClusteringConfig:
        return ClusteringConfig(alpha=self.alpha, sigma=sigma, rho=self.rho,
                                ite_clustering=self.ite_clustering)


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()})


def adam_step(state: AdamState, params: dict[str, np.ndarray],
              grads: dict[str, np.ndarray], lr: float):
    """One bias-corrected Adam update; parameters are updated in place."""
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != param shape {p.shape} for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


@dataclass
class ModelParams:
    """All trainable tensors: embedding(s), per-label metrics, log sigma."""

    embeddings: list[EmbeddingParams]   # one shared, or one per label
    metrics: DistanceMetricParams
    log_sigma: np.ndarray               # 0-d array so Adam can update in place

    def embedding_for(self, k: int) -> EmbeddingParams:
        return self.embeddings[0] if len(self.embeddings) == 1 else self.embeddings[k]

    @property
    def sigma(self) -> float:
        return float(np.exp(self.log_sigma))


def init_model(n_features: int, n_labels: int, hp: Hyperparams) -> ModelParams:
    m = hp.M if hp.M is not None else embedding_dim(n_features)
    if hp.mode == "ablation-i":
        embs = [init_embedding(n_features, m, hp.beta, derive_seed(hp.seed, "init", k))
                for k in range(n_labels)]
    else:
        embs = [init_embedding(n_features, m, hp.beta, derive_seed(hp.seed, "init", 0))]
    return ModelParams(embs, identity_metrics(n_labels, m), np.array(np.log(hp.sigma)))


def trainable_params(model: ModelParams, hp: Hyperparams) -> dict[str, np.ndarray]:
    params: dict[str, np.ndarray] = {}
    for i, emb in enumerate(model.embeddings):
        params[f"W{i}"] = emb.W
        params[f"b{i}"] = emb.b
    if hp.mode != "ablation-d":
        for k, u in enumerate(model.metrics.U):
            params[f"U{k}"] = u
    if hp.adaptive:
        params["log_sigma"] = model.log_sigma
    return params


# ---------------------------------------------------------------------------
# forward / backward for one label


@dataclass
class LabelForward:
    """Everything the backward pass needs for one label."""

    k: int
    pool_idx: np.ndarray        # rows of the training matrix, positives first
    n_pos: int
    pool_x: np.ndarray          # (n, D) standardized inputs
    pool_e: np.ndarray          # (n, M) embeddings
    query_rows: np.ndarray      # positions within the pool
    query_y: np.ndarray
    protos_pos: np.ndarray      # (C+, M)
    protos_neg: np.ndarray
    w_pos: np.ndarray           # (n+, C+) convex-combination weights
    w_neg: np.ndarray
    d2_pos: np.ndarray          # squared distances, queries x prototypes
    d2_neg: np.ndarray
    probs: np.ndarray
    prob_cache: tuple


def _build_prototypes(e_block: np.ndarray, u: np.ndarray, hp: Hyperparams,
                      sigma: float, threshold_override, frozen_w):
    if frozen_w is not None:
        w = frozen_w
        protos = np.ascontiguousarray(w.T) @ e_block
        return protos, w
    if not hp.adaptive:
        n = e_block.shape[0]
        return single_prototype(e_block)[None, :], np.full((n, 1), 1.0 / n)
    dist = mahalanobis_pairs(u, hp.distance_power)
    protos, w = adaptive_prototypes(e_block, hp.clustering_config(sigma), dist,
                                    threshold=threshold_override,
                                    return_weights=True)
    return protos, w


def _forward_label_core(model: ModelParams, hp: Hyperparams, k: int,
                        x_pos: np.ndarray, x_neg: np.ndarray,
                        pool_idx: np.ndarray, query_rows: np.ndarray,
                        threshold_override=None, frozen=None) -> LabelForward:
    emb = model.embedding_for(k)
    u = model.metrics.U[k]
    pool_x = np.vstack([x_pos, x_neg])
    pool_e = embed(emb, pool_x)
    n_pos = x_pos.shape[0]
    fz_pos, fz_neg = frozen if frozen is not None else (None, None)
    protos_pos, w_pos = _build_prototypes(pool_e[:n_pos], u, hp, model.sigma,
                                          threshold_override, fz_pos)
    protos_neg, w_neg = _build_prototypes(pool_e[n_pos:], u, hp, model.sigma,
                                          threshold_override, fz_neg)
    e_q = pool_e[query_rows]
    d2_pos = pairwise_squared_mahalanobis(u, e_q, protos_pos)
    d2_neg = pairwise_squared_mahalanobis(u, e_q, protos_neg)
    if hp.distance_power == 1:
        d_pos, d_neg = np.sqrt(d2_pos), np.sqrt(d2_neg)
    else:
        d_pos, d_neg = d2_pos, d2_neg
    probs, cache = label_probabilities(d_pos, d_neg)
    query_y = (query_rows < n_pos).astype(np.float64)
    return LabelForward(k=k, pool_idx=pool_idx, n_pos=n_pos, pool_x=pool_x,
                        pool_e=pool_e, query_rows=query_rows, query_y=query_y,
                        protos_pos=protos_pos, protos_neg=protos_neg,
                        w_pos=w_pos, w_neg=w_neg, d2_pos=d2_pos, d2_neg=d2_neg,
                        probs=probs, prob_cache=cache)


def forward_label(model: ModelParams, ds: Dataset, k: int, sample,
                  hp: Hyperparams, threshold_override=None,
                  feature_stats=None):
    """Forward pass for one label over its sampled instance pool.

    ``sample`` is the (pos_indices, neg_indices) pair from
    :func:`pnml.datasets.sample_label_instances`; every sampled instance is
    scored as a query. Returns (probabilities, (pos_protos, neg_protos),
    cache) where cache feeds :func:`backward_label`.
    """
    pos_idx, neg_idx = sample
    if len(pos_idx) == 0 or len(neg_idx) == 0:
        raise ValueError(f"label {k} needs at least one positive and one negative instance")
    x = ds.features
    if feature_stats is not None:
        mean, scale = feature_stats
        x = (x - mean) / scale
    pool_idx = np.concatenate([pos_idx, neg_idx])
    query_rows = np.arange(len(pool_idx))
    fwd = _forward_label_core(model, hp, k, x[pos_idx], x[neg_idx],
                              pool_idx, query_rows, threshold_override)
    return fwd.probs, (fwd.protos_pos, fwd.protos_neg), fwd


def backward_label(model: ModelParams, hp: Hyperparams, fwd: LabelForward,
                   grad_probs: np.ndarray, grad_protos_pos_extra=None):
    """Backpropagate one label's loss into its parameter gradients.

    ``grad_probs`` is dL/dp for the query mini-batch;
    ``grad_protos_pos_extra`` carries the correlation-regularizer gradient
    w.r.t. each positive prototype. Returns (grad_W, grad_b, grad_U).
    """
    u = model.metrics.U[fwd.k]
    g_dpos, g_dneg = label_probabilities_backward(grad_probs, fwd.prob_cache)
    if hp.distance_power == 1:
        g_dpos = g_dpos * 0.5 / np.sqrt(np.maximum(fwd.d2_pos, _SQRT_GUARD))
        g_dneg = g_dneg * 0.5 / np.sqrt(np.maximum(fwd.d2_neg, _SQRT_GUARD))
    e_q = fwd.pool_e[fwd.query_rows]
    gu_p, ge_q_p, g_protos_pos = batched_squared_mahalanobis_backward(
        u, e_q, fwd.protos_pos, g_dpos)
    gu_n, ge_q_n, g_protos_neg = batched_squared_mahalanobis_backward(
        u, e_q, fwd.protos_neg, g_dneg)
    grad_u = gu_p + gu_n
    if grad_protos_pos_extra is not None:
        g_protos_pos = g_protos_pos + grad_protos_pos_extra

    grad_pool_e = np.zeros_like(fwd.pool_e)
    grad_pool_e[fwd.query_rows] += ge_q_p + ge_q_n  # query rows are unique
    grad_pool_e[:fwd.n_pos] += fwd.w_pos @ g_protos_pos
    grad_pool_e[fwd.n_pos:] += fwd.w_neg @ g_protos_neg

    emb = model.embedding_for(fwd.k)
    grad_w, grad_b, _ = embed_backward(emb, fwd.pool_x, grad_pool_e)
    return grad_w, grad_b, grad_u


# ---------------------------------------------------------------------------
# the trained artifact


@dataclass
class TrainedModel:
    hyperparams: Hyperparams
    params: ModelParams
    prototypes: PrototypeSet
    label_has_pos: np.ndarray
    label_has_neg: np.ndarray
    feature_mean: np.ndarray | None
    feature_scale: np.ndarray | None
    history: list[LossBreakdown] = field(default_factory=list)

    @property
    def n_labels(self) -> int:
        return len(self.prototypes.by_label)

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if self.feature_mean is None:
            return x
        return (x - self.feature_mean) / self.feature_scale

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        """Per-label positive probabilities, (N, K).

        Labels that had no positive (negative) training instances score a
        constant 0 (1).
        """
        xs = self.transform(np.atleast_2d(x))
        n = xs.shape[0]
        out = np.zeros((n, self.n_labels))
        power = self.hyperparams.distance_power
        for k, lp in enumerate(self.prototypes.by_label):
            if not self.label_has_pos[k]:
                out[:, k] = 0.0
                continue
            if not self.label_has_neg[k]:
                out[:, k] = 1.0
                continue
            e = embed(self.params.embedding_for(k), xs)
            u = self.params.metrics.U[k]
            d2p = pairwise_squared_mahalanobis(u, e, lp.pos)
            d2n = pairwise_squared_mahalanobis(u, e, lp.neg)
            if power == 1:
                d2p, d2n = np.sqrt(d2p), np.sqrt(d2n)
            out[:, k], _ = label_probabilities(d2p, d2n)
        return out

    def predict(self, x: np.ndarray, threshold: float = 0.5) -> np.ndarray:
        return predict_labels(self.predict_proba(x), threshold)


def build_prototype_set(model: ModelParams, ds: Dataset, hp: Hyperparams,
                        feature_stats=None) -> PrototypeSet:
    """Prototypes from the full (unsampled) dataset under current params."""
    x = ds.features
    if feature_stats is not None:
        mean, scale = feature_stats
        x = (x - mean) / scale
    by_label = []
    for k in range(ds.n_labels):
        col = ds.labels[:, k]
        blocks = {}
        for polarity, mask in (("pos", col == 1), ("neg", col == 0)):
            if not mask.any():
                blocks[polarity] = None
                continue
            e = embed(model.embedding_for(k), x[mask])
            if hp.adaptive:
                dist = mahalanobis_pairs(model.metrics.U[k], hp.distance_power)
                blocks[polarity] = adaptive_prototypes(
                    e, hp.clustering_config(model.sigma), dist)
            else:
                blocks[polarity] = single_prototype(e)[None, :]
        by_label.append(LabelPrototypes(blocks["pos"], blocks["neg"]))
    return PrototypeSet(by_label)


# ---------------------------------------------------------------------------
# training loop


def _feature_stats(ds: Dataset, hp: Hyperparams):
    if not hp.standardize:
        return None
    mean = ds.features.mean(axis=0)
    scale = ds.features.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return mean, scale


def train(ds_train: Dataset, hp: Hyperparams) -> TrainedModel:
    """Train a model; deterministic for a given hp.seed.

    Labels lacking positive or negative instances are excluded from the
    cross-entropy and correlation terms (their metrics still feel the
    Frobenius regularizer) and predict a constant at inference.

    Raises:
        TrainingDivergenceError: if the loss becomes non-finite.
    """
    n, d, n_labels = ds_train.n_instances, ds_train.n_features, ds_train.n_labels
    stats = _feature_stats(ds_train, hp)
    xs = ds_train.features if stats is None else (ds_train.features - stats[0]) / stats[1]

    has_pos = ds_train.labels.sum(axis=0) > 0
    has_neg = (1 - ds_train.labels).sum(axis=0) > 0
    active = [k for k in range(n_labels) if has_pos[k] and has_neg[k]]
    if not active:
        raise ValueError("no label has both positive and negative instances")

    model = init_model(d, n_labels, hp)
    params = trainable_params(model, hp)
    adam = AdamState.for_params(params)
    corr = label_correlation_matrix(ds_train)
    # independently trained labels must not interact through shared terms
    track_corr = hp.mode != "ablation-i"
    use_corr_grad = track_corr and hp.lambda2 > 0
    iters = max(1, math.ceil(n / hp.batch_size))
    history: list[LossBreakdown] = []

    for epoch in range(hp.epochs):
        epoch_terms = np.zeros(3)
        for it in range(iters):
            forwards: list[LabelForward] = []
            for k in active:
                cfg = SamplingConfig(hp.r_pos, hp.r_neg,
                                     derive_seed(hp.seed, "sample", epoch, it, k))
                pos_idx, neg_idx = sample_label_instances(ds_train, k, cfg)
                pool_idx = np.concatenate([pos_idx, neg_idx])
                rng = np.random.default_rng(derive_seed(hp.seed, "query", epoch, it, k))
                n_q = min(hp.batch_size, len(pool_idx))
                query_rows = np.sort(rng.choice(len(pool_idx), size=n_q, replace=False))
                forwards.append(_forward_label_core(
                    model, hp, k, xs[pos_idx], xs[neg_idx], pool_idx, query_rows))

            l_e = sum(cross_entropy(f.probs, f.query_y) for f in forwards)
            l_m = metric_regularizer(model.metrics)
            if track_corr:
                protos = PrototypeSet([LabelPrototypes(None, None)] * n_labels)
                for f in forwards:
                    protos.by_label[f.k] = LabelPrototypes(f.protos_pos, f.protos_neg)
                l_c = correlation_regularizer(protos, corr)
                mean_grads = correlation_regularizer_mean_grad(protos, corr)
            else:
                l_c = 0.0
            l_all = l_e + hp.lambda1 * l_m + hp.lambda2 * l_c
            if not np.isfinite(l_all):
                raise TrainingDivergenceError(
                    f"non-finite loss at epoch {epoch}, batch {it}: "
                    f"L_e={l_e:.4g} L_m={l_m:.4g} L_c={l_c:.4g}")
            epoch_terms += (l_e, l_m, l_c)

            grads = {name: np.zeros_like(p) for name, p in params.items()}
            shared = len(model.embeddings) == 1
            for f in forwards:
                extra = None
                if use_corr_grad:
                    extra = hp.lambda2 * mean_grads[f.k][None, :] / f.protos_pos.shape[0]
                gw, gb, gu = backward_label(model, hp, f, cross_entropy_grad(f.probs, f.query_y),
                                            grad_protos_pos_extra=extra)
                i = 0 if shared else f.k
                grads[f"W{i}"] += gw
                grads[f"b{i}"] += gb
                if hp.mode != "ablation-d":
                    grads[f"U{f.k}"] += gu
            if hp.mode != "ablation-d" and hp.lambda1 > 0:
                for k in range(n_labels):
                    grads[f"U{k}"] += 2.0 * hp.lambda1 * model.metrics.U[k]
            adam_step(adam, params, grads, hp.learning_rate)

        e_mean = epoch_terms / iters
        history.append(loss_breakdown(e_mean[0], e_mean[1], e_mean[2],
                                      hp.lambda1, hp.lambda2))

    protos = build_prototype_set(model, ds_train, hp, stats)
    return TrainedModel(hyperparams=hp, params=model, prototypes=protos,
                        label_has_pos=has_pos, label_has_neg=has_neg,
                        feature_mean=None if stats is None else stats[0],
                        feature_scale=None if stats is None else stats[1],
                        history=history)


# ---------------------------------------------------------------------------
# gradient verification harness


@dataclass
class GradientCheckReport:
    """Max relative error of analytic vs finite-difference gradients."""

    groups: dict[str, float]
    tolerance: float
    trials: int

    @property
    def passed(self) -> bool:
        return all(err < self.tolerance for err in self.groups.values())

    def lines(self) -> list[str]:
        out = []
        for name, err in sorted(self.groups.items()):
            status = "ok" if err < self.tolerance else "FAIL"
            out.append(f"{name:10s} max_rel_err={err:.3e}  [{status}]")
        return out


def _random_problem(rng: np.random.Generator, hp: Hyperparams):
    n = int(rng.integers(4, 9))
    d = int(rng.integers(2, 6))
    n_labels = int(rng.integers(1, 4))
    m = int(rng.integers(2, 5))
    x = rng.normal(size=(n, d))
    # guarantee each label has at least one positive and one negative
    while True:
        y = (rng.random(size=(n, n_labels)) < 0.5).astype(int)
        if ((y.sum(axis=0) > 0) & (y.sum(axis=0) < n)).all():
            break
    ds = Dataset(x, y)
    small = replace(hp, M=m, batch_size=n, r_pos=1.0, r_neg=1.0,
                    standardize=False, seed=int(rng.integers(2 ** 31)))
    return ds, small


def _loss_for_check(model: ModelParams, hp: Hyperparams, ds: Dataset,
                    samples, frozen_by_label, corr):
    total_e = 0.0
    protos = PrototypeSet([LabelPrototypes(None, None)] * ds.n_labels)
    for k, (pos_idx, neg_idx) in samples.items():
        pool_idx = np.concatenate([pos_idx, neg_idx])
        fwd = _forward_label_core(model, hp, k, ds.features[pos_idx],
                                  ds.features[neg_idx], pool_idx,
                                  np.arange(len(pool_idx)),
                                  frozen=frozen_by_label[k])
        total_e += cross_entropy(fwd.probs, fwd.query_y)
        protos.by_label[k] = LabelPrototypes(fwd.protos_pos, fwd.protos_neg)
    l_m = metric_regularizer(model.metrics)
    l_c = correlation_regularizer(protos, corr) if hp.mode != "ablation-i" else 0.0
    return total_loss_value(total_e, l_m, l_c, hp)


def total_loss_value(l_e, l_m, l_c, hp: Hyperparams) -> float:
    return float(l_e + hp.lambda1 * l_m + hp.lambda2 * l_c)


def gradient_check(hp: Hyperparams, trial_count: int = 10,
                   tolerance: float = 1e-3, seed: int = 0,
                   fd_step: float = 1e-5) -> GradientCheckReport:
    """Compare analytic gradients against central finite differences.

    Runs on random tiny problems. In adaptive modes the clustering
    assignment weights are captured once per trial and held fixed, so both
    sides differentiate the same (smooth) function. Failures are reported
    in the result, never raised.
    """
    rng = np.random.default_rng(seed)
    worst: dict[str, float] = {}

    for _ in range(trial_count):
        ds, shp = _random_problem(rng, hp)
        model = init_model(ds.n_features, ds.n_labels, shp)
        # move off the symmetric init so gradients are generic
        for emb in model.embeddings:
            emb.W += rng.normal(scale=0.3, size=emb.W.shape)
            emb.b += rng.normal(scale=0.3, size=emb.b.shape)
        for u in model.metrics.U:
            u += rng.normal(scale=0.2, size=u.shape)
        params = trainable_params(model, shp)
        corr = label_correlation_matrix(ds)

        samples = {}
        frozen_by_label = {}
        for k in range(ds.n_labels):
            cfg = SamplingConfig(shp.r_pos, shp.r_neg, derive_seed(shp.seed, "sample", 0, 0, k))
            pos_idx, neg_idx = sample_label_instances(ds, k, cfg)
            samples[k] = (pos_idx, neg_idx)
            pool_idx = np.concatenate([pos_idx, neg_idx])
            fwd = _forward_label_core(model, shp, k, ds.features[pos_idx],
                                      ds.features[neg_idx], pool_idx,
                                      np.arange(len(pool_idx)))
            frozen_by_label[k] = (fwd.w_pos, fwd.w_neg)

        # analytic gradients of the frozen-assignment loss
        grads = {name: np.zeros_like(p) for name, p in params.items()}
        protos = PrototypeSet([LabelPrototypes(None, None)] * ds.n_labels)
        fwds = {}
        for k, (pos_idx, neg_idx) in samples.items():
            pool_idx = np.concatenate([pos_idx, neg_idx])
            fwd = _forward_label_core(model, shp, k, ds.features[pos_idx],
                                      ds.features[neg_idx], pool_idx,
                                      np.arange(len(pool_idx)),
                                      frozen=frozen_by_label[k])
            fwds[k] = fwd
            protos.by_label[k] = LabelPrototypes(fwd.protos_pos, fwd.protos_neg)
        use_corr = shp.mode != "ablation-i"
        mean_grads = correlation_regularizer_mean_grad(protos, corr) if use_corr else None
        shared = len(model.embeddings) == 1
        for k, fwd in fwds.items():
            extra = None
            if use_corr:
                extra = shp.lambda2 * mean_grads[k][None, :] / fwd.protos_pos.shape[0]
            gw, gb, gu = backward_label(model, shp, fwd,
                                        cross_entropy_grad(fwd.probs, fwd.query_y),
                                        grad_protos_pos_extra=extra)
            i = 0 if shared else k
            grads[f"W{i}"] += gw
            grads[f"b{i}"] += gb
            if shp.mode != "ablation-d":
                grads[f"U{k}"] += gu
        if shp.mode != "ablation-d":
            for k in range(ds.n_labels):
                grads[f"U{k}"] += 2.0 * shp.lambda1 * model.metrics.U[k]

        def loss_now():
            return _loss_for_check(model, shp, ds, samples, frozen_by_label, corr)

        for name, p in params.items():
            group = name.rstrip("0123456789")
            flat = p.reshape(-1)
            gflat = grads[name].reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + fd_step
                up = loss_now()
                flat[j] = orig - fd_step
                down = loss_now()
                flat[j] = orig
                fd = (up - down) / (2.0 * fd_step)
                err = abs(gflat[j] - fd) / max(abs(gflat[j]), abs(fd), 1e-4)
                worst[group] = max(worst.get(group, 0.0), err)

    if hp.mode == "ablation-d":
        worst["U"] = 0.0  # frozen metrics: gradients are identically zero
    return GradientCheckReport(groups=worst, tolerance=tolerance,
                               trials=trial_count)
