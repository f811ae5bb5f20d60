"""The five evaluation metrics and cross-validation reporting.

Conventions for degenerate cases: an instance whose predicted and true
label sets are both empty counts as a Jaccard accuracy of 1; a label with
no true positives, false positives, or false negatives contributes an F1
of 1 to the macro average; instances whose truth row is all-zero or
all-one are excluded from the ranking metrics; score ties count as ranking
violations.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

METRIC_NAMES = ("accuracy", "macro_f1", "micro_f1", "average_precision", "ranking_loss")


def _as_binary(a) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a))
    if not np.isin(a, (0, 1)).all():
        raise ValueError("expected a binary indicator matrix")
    return a.astype(np.int64)


def _check_pair(pred, truth):
    p, t = _as_binary(pred), _as_binary(truth)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {t.shape}")
    return p, t


def accuracy(pred, truth) -> float:
    """Mean Jaccard overlap between predicted and true label sets."""
    p, t = _check_pair(pred, truth)
    inter = (p & t).sum(axis=1)
    union = (p | t).sum(axis=1)
    return float(np.where(union > 0, inter / np.maximum(union, 1), 1.0).mean())


def micro_f1(pred, truth) -> float:
    """F1 over confusion counts pooled across all labels."""
    p, t = _check_pair(pred, truth)
    tp = int((p & t).sum())
    fp = int((p & (1 - t)).sum())
    fn = int(((1 - p) & t).sum())
    denom = 2 * tp + fp + fn
    return 1.0 if denom == 0 else 2.0 * tp / denom


def macro_f1(pred, truth) -> float:
    """Unweighted mean of per-label F1; an error-free empty label scores 1."""
    p, t = _check_pair(pred, truth)
    tp = (p & t).sum(axis=0)
    fp = (p & (1 - t)).sum(axis=0)
    fn = ((1 - p) & t).sum(axis=0)
    denom = 2 * tp + fp + fn
    f1 = np.where(denom > 0, 2.0 * tp / np.maximum(denom, 1), 1.0)
    return float(f1.mean())


def _ranking_rows(scores, truth):
    s = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    t = _as_binary(truth)
    if s.shape != t.shape:
        raise ValueError(f"shape mismatch: {s.shape} vs {t.shape}")
    n_rel = t.sum(axis=1)
    keep = (n_rel > 0) & (n_rel < t.shape[1])
    return s, t, keep


def average_precision(scores, truth) -> float:
    """Mean over instances of the average precision at each relevant label.

    Labels are ranked by descending score; a tied label is ranked below
    every label sharing its score. Instances with empty or full truth rows
    are excluded from the mean.
    """
    s, t, keep = _ranking_rows(scores, truth)
    vals = []
    for i in np.flatnonzero(keep):
        rel = np.flatnonzero(t[i])
        # pessimistic rank: strictly-greater scores plus all other ties
        ranks = np.array([(s[i] > s[i, j]).sum() + (s[i] == s[i, j]).sum()
                          for j in rel])
        above = np.array([((s[i][rel] > s[i, j]) | (s[i][rel] == s[i, j])).sum()
                          for j in rel])
        vals.append((above / ranks).mean())
    if not vals:
        raise ValueError("no instance has both a relevant and an irrelevant label")
    return float(np.mean(vals))


def ranking_loss(scores, truth) -> float:
    """Fraction of (relevant, irrelevant) label pairs ordered wrongly.

    A relevant label scoring less than *or equal to* an irrelevant one
    counts as a violation. Instances with empty or full truth rows are
    excluded from the mean.
    """
    s, t, keep = _ranking_rows(scores, truth)
    vals = []
    for i in np.flatnonzero(keep):
        rel = s[i][t[i] == 1]
        irr = s[i][t[i] == 0]
        violations = (rel[:, None] <= irr[None, :]).sum()
        vals.append(violations / (len(rel) * len(irr)))
    if not vals:
        raise ValueError("no instance has both a relevant and an irrelevant label")
    return float(np.mean(vals))


def compute_all(pred, scores, truth) -> dict[str, float]:
    return {
        "accuracy": accuracy(pred, truth),
        "macro_f1": macro_f1(pred, truth),
        "micro_f1": micro_f1(pred, truth),
        "average_precision": average_precision(scores, truth),
        "ranking_loss": ranking_loss(scores, truth),
    }


@dataclass
class EvalReport:
    """Per-fold and aggregate metric values plus run metadata."""

    dataset: str
    config_hash: str
    folds: list[dict[str, float]]
    wall_seconds: float = 0.0
    extra: dict = field(default_factory=dict)

    @property
    def mean(self) -> dict[str, float]:
        return {name: float(np.mean([f[name] for f in self.folds]))
                for name in METRIC_NAMES}

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset,
            "config_hash": self.config_hash,
            "wall_seconds": self.wall_seconds,
            "folds": self.folds,
            "mean": self.mean,
            **({"extra": self.extra} if self.extra else {}),
        }


def evaluate_model(model, ds) -> dict[str, float]:
    """Score a trained model on a dataset with all five metrics."""
    scores = model.predict_proba(ds.features)
    pred = model.predict(ds.features)
    return compute_all(pred, scores, ds.labels)
