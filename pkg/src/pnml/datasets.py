"""Multi-label dataset container, file formats, CV splitting, and sampling.

Two on-disk formats are supported:

* ``sparse-multilabel``: header line ``N D K``, then one record per line of
  the form ``l1,l2,... i:v i:v ...`` with 1-based label indices (empty field
  for no labels) and 1-based ``index:value`` feature pairs; absent features
  are zero.
* ``dense-csv-pair``: a directory holding ``features.csv`` (N x D, no
  header) and ``labels.csv`` (N x K of 0/1), optionally with
  ``feature_names.txt`` / ``label_names.txt`` sidecars.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMATS = ("sparse-multilabel", "dense-csv-pair")


class DatasetError(ValueError):
    """Malformed dataset file or violated dataset invariant."""


def derive_seed(seed: int, *tags) -> int:
    """Derive a named sub-seed from a master seed.

    Stable across runs and platforms; tags are hashed with crc32 so that
    e.g. the split, init, and sampling streams can be varied independently.
    """
    entropy = [int(seed) & 0xFFFFFFFF] + [zlib.crc32(str(t).encode()) for t in tags]
    return int(np.random.SeedSequence(entropy).generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class Dataset:
    """Feature matrix paired with a binary label matrix."""

    features: np.ndarray  # (N, D) float
    labels: np.ndarray    # (N, K) of 0/1
    feature_names: list[str] | None = None
    label_names: list[str] | None = None

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels)
        if f.ndim != 2 or y.ndim != 2:
            raise DatasetError("features and labels must be 2-D matrices")
        if f.shape[0] != y.shape[0]:
            raise DatasetError(
                f"row mismatch: {f.shape[0]} feature rows vs {y.shape[0]} label rows")
        if min(f.shape[0], f.shape[1], y.shape[1]) < 1:
            raise DatasetError("need N >= 1, D >= 1, K >= 1")
        if not np.isfinite(f).all():
            raise DatasetError("features contain NaN or Inf")
        if not np.isin(y, (0, 1)).all():
            raise DatasetError("label entries must be exactly 0 or 1")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "labels", y.astype(np.int8))
        if self.feature_names is not None and len(self.feature_names) != self.n_features:
            raise DatasetError("feature_names length mismatch")
        if self.label_names is not None and len(self.label_names) != self.n_labels:
            raise DatasetError("label_names length mismatch")

    @property
    def n_instances(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_labels(self) -> int:
        return self.labels.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx],
                       self.feature_names, self.label_names)


@dataclass(frozen=True)
class SamplingConfig:
    """Per-label positive/negative sampling rates, both in (0, 1]."""

    r_pos: float = 1.0
    r_neg: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.r_pos <= 1.0 and 0.0 < self.r_neg <= 1.0):
            raise ValueError("sampling rates must lie in (0, 1]")


@dataclass(frozen=True)
class CorrelationMatrix:
    """K x K Pearson correlation of label columns, entries in [-1, 1]."""

    c: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.c, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise ValueError("correlation matrix must be square")
        if np.abs(c - c.T).max(initial=0.0) > 1e-12:
            raise ValueError("correlation matrix must be symmetric")
        if c.size and (c.min() < -1 - 1e-12 or c.max() > 1 + 1e-12):
            raise ValueError("correlation entries must lie in [-1, 1]")
        object.__setattr__(self, "c", c)


# ---------------------------------------------------------------------------
# loading / saving


def _parse_sparse(lines: list[str], path: str) -> Dataset:
    header = lines[0].split()
    if len(header) != 3:
        raise DatasetError(f"{path}:1: header must be 'N D K'")
    try:
        n, d, k = (int(v) for v in header)
    except ValueError:
        raise DatasetError(f"{path}:1: non-integer header field") from None
    if len(lines) - 1 < n:
        raise DatasetError(f"{path}: header declares {n} records, found {len(lines) - 1}")
    features = np.zeros((n, d))
    labels = np.zeros((n, k), dtype=np.int8)
    for row, line in enumerate(lines[1:1 + n]):
        lineno = row + 2
        tokens = line.split()
        if tokens and ":" not in tokens[0]:
            label_field, feat_tokens = tokens[0], tokens[1:]
        else:
            label_field, feat_tokens = "", tokens
        if label_field:
            for part in label_field.split(","):
                try:
                    li = int(part)
                except ValueError:
                    raise DatasetError(f"{path}:{lineno}: bad label index {part!r}") from None
                if not 1 <= li <= k:
                    raise DatasetError(
                        f"{path}:{lineno}: label index {li} outside 1..{k}")
                labels[row, li - 1] = 1
        for tok in feat_tokens:
            try:
                idx_s, val_s = tok.split(":", 1)
                fi, fv = int(idx_s), float(val_s)
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: bad feature pair {tok!r}") from None
            if not 1 <= fi <= d:
                raise DatasetError(
                    f"{path}:{lineno}: feature index {fi} outside 1..{d}")
            features[row, fi - 1] = fv
    return Dataset(features, labels)


def _parse_csv_matrix(path: Path, kind: str) -> np.ndarray:
    rows = []
    width = None
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if width is None:
                width = len(parts)
            elif len(parts) != width:
                raise DatasetError(
                    f"{path}:{lineno}: expected {width} columns, found {len(parts)}")
            try:
                rows.append([float(v) for v in parts])
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: non-numeric {kind} value") from None
    if not rows:
        raise DatasetError(f"{path}: empty {kind} file")
    return np.array(rows)


def _read_names(path: Path) -> list[str] | None:
    return path.read_text().splitlines() if path.exists() else None


def load_dataset(path, format: str = "dense-csv-pair") -> Dataset:
    """Load a dataset from ``path`` in one of the supported formats."""
    if format not in FORMATS:
        raise DatasetError(f"unknown format {format!r}; expected one of {FORMATS}")
    p = Path(path)
    if format == "sparse-multilabel":
        if not p.is_file():
            raise DatasetError(f"no such file: {p}")
        lines = p.read_text().splitlines()
        if not lines:
            raise DatasetError(f"{p}: empty file")
        return _parse_sparse(lines, str(p))
    if not p.is_dir():
        raise DatasetError(f"dense-csv-pair expects a directory, got {p}")
    features = _parse_csv_matrix(p / "features.csv", "feature")
    labels = _parse_csv_matrix(p / "labels.csv", "label")
    if labels.shape[0] != features.shape[0]:
        raise DatasetError(
            f"{p}: features.csv has {features.shape[0]} rows, labels.csv {labels.shape[0]}")
    if not np.isin(labels, (0.0, 1.0)).all():
        raise DatasetError(f"{p}/labels.csv: label value outside {{0,1}}")
    return Dataset(features, labels,
                   _read_names(p / "feature_names.txt"),
                   _read_names(p / "label_names.txt"))


def save_dataset(ds: Dataset, path, format: str = "dense-csv-pair") -> None:
    """Write ``ds`` so that :func:`load_dataset` parses it back identically."""
    if format not in FORMATS:
        raise DatasetError(f"unknown format {format!r}; expected one of {FORMATS}")
    p = Path(path)
    if format == "sparse-multilabel":
        with open(p, "w") as f:
            f.write(f"{ds.n_instances} {ds.n_features} {ds.n_labels}\n")
            for i in range(ds.n_instances):
                labels = ",".join(str(j + 1) for j in np.flatnonzero(ds.labels[i]))
                feats = [f"{j + 1}:{float(v)!r}" for j, v in enumerate(ds.features[i]) if v != 0.0]
                f.write(" ".join([labels] + feats) + "\n")
        return
    p.mkdir(parents=True, exist_ok=True)
    with open(p / "features.csv", "w") as f:
        for row in ds.features:
            f.write(",".join(repr(float(v)) for v in row) + "\n")
    with open(p / "labels.csv", "w") as f:
        for row in ds.labels:
            f.write(",".join(str(int(v)) for v in row) + "\n")
    if ds.feature_names is not None:
        (p / "feature_names.txt").write_text("\n".join(ds.feature_names) + "\n")
    if ds.label_names is not None:
        (p / "label_names.txt").write_text("\n".join(ds.label_names) + "\n")


# ---------------------------------------------------------------------------
# splitting and sampling


def kfold_split(ds: Dataset, folds: int, seed: int) -> list[tuple[Dataset, Dataset]]:
    """Shuffle rows and return ``folds`` (train, test) pairs.

    Test folds are pairwise disjoint, cover every row, and differ in size
    by at most one. Deterministic for a given seed.
    """
    n = ds.n_instances
    if not 2 <= folds <= n:
        raise ValueError(f"folds must lie in [2, {n}], got {folds}")
    order = np.random.default_rng(seed).permutation(n)
    base, extra = divmod(n, folds)
    splits = []
    start = 0
    for i in range(folds):
        size = base + (1 if i < extra else 0)
        test_idx = order[start:start + size]
        train_idx = np.concatenate([order[:start], order[start + size:]])
        splits.append((ds.subset(train_idx), ds.subset(test_idx)))
        start += size
    return splits


def sample_label_instances(ds: Dataset, k: int, cfg: SamplingConfig):
    """Sample positive and negative row indices for label ``k``.

    Draws ``ceil(r_pos * n_pos)`` positives and ``ceil(r_neg * n_neg)``
    negatives without replacement; an empty positive (negative) set yields
    an empty index array.
    """
    if not 0 <= k < ds.n_labels:
        raise IndexError(f"label index {k} outside 0..{ds.n_labels - 1}")
    rng = np.random.default_rng(cfg.seed)
    col = ds.labels[:, k]
    pos = np.flatnonzero(col == 1)
    neg = np.flatnonzero(col == 0)
    n_pos = math.ceil(cfg.r_pos * len(pos))
    n_neg = math.ceil(cfg.r_neg * len(neg))
    pos_idx = np.sort(rng.choice(pos, size=n_pos, replace=False)) if n_pos else pos[:0]
    neg_idx = np.sort(rng.choice(neg, size=n_neg, replace=False)) if n_neg else neg[:0]
    return pos_idx, neg_idx


def label_correlation_matrix(ds: Dataset) -> CorrelationMatrix:
    """Pearson correlation between label columns.

    Zero-variance columns get off-diagonal correlation 0 (and 1 on the
    diagonal) instead of NaN.
    """
    y = ds.labels.astype(np.float64)
    centered = y - y.mean(axis=0)
    std = centered.std(axis=0)
    cov = centered.T @ centered / y.shape[0]
    denom = np.outer(std, std)
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.where(denom > 0, cov / np.where(denom > 0, denom, 1.0), 0.0)
    np.fill_diagonal(c, 1.0)
    c = np.clip((c + c.T) / 2.0, -1.0, 1.0)
    return CorrelationMatrix(c)
