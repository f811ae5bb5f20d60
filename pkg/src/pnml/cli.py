"""Command-line interface: train, eval, cv, grid, gradcheck, export-protos.

The config file is a flat JSON document whose keys mirror the Hyperparams
field names plus the run keys (dataset, format, folds, report_format,
grid_metric). Unknown keys are hard errors so grid-spec typos surface
immediately. For the grid command, ``lambda1``, ``lambda2``, and ``alpha``
may hold lists of values.

Exit codes: 0 success, 2 config/validation error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import itertools
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .datasets import Dataset, DatasetError, derive_seed, kfold_split, load_dataset
from .embedding import EmbeddingParams
from .evaluation import METRIC_NAMES, EvalReport, evaluate_model
from .metric import DistanceMetricParams
from .prototypes import LabelPrototypes, PrototypeSet, export_prototypes
from .training import (Hyperparams, MODES, ModelParams, TrainedModel,
                       TrainingDivergenceError, gradient_check, train)

CHECKPOINT_FORMAT = "pnml-checkpoint"
CHECKPOINT_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

RUN_KEYS = {
    "dataset": None,
    "format": "dense-csv-pair",
    "folds": 5,
    "report_format": "json",
    "grid_metric": "accuracy",
}
GRID_KEYS = ("lambda1", "lambda2", "alpha")
HP_FIELDS = {f.name: f for f in dataclasses.fields(Hyperparams)}


class ConfigError(ValueError):
    """Invalid run configuration."""


@dataclasses.dataclass
class RunConfig:
    dataset: str
    format: str
    folds: int
    report_format: str
    grid_metric: str
    hyperparams: Hyperparams
    grid: dict[str, list]          # grid-able keys -> list of candidate values
    raw: dict

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.raw, sort_keys=True).encode()).hexdigest()[:16]


def parse_config(raw: dict, overrides: dict | None = None) -> RunConfig:
    """Validate a flat config dict; reject unknown keys."""
    known = set(RUN_KEYS) | set(HP_FIELDS)
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    merged = dict(raw)
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = value

    run = {k: merged.get(k, default) for k, default in RUN_KEYS.items()}
    if run["dataset"] is None:
        raise ConfigError("config must set 'dataset'")
    if not Path(run["dataset"]).exists():
        raise ConfigError(f"dataset path does not exist: {run['dataset']}")
    if run["report_format"] not in ("json", "table"):
        raise ConfigError("report_format must be 'json' or 'table'")
    if run["grid_metric"] not in METRIC_NAMES:
        raise ConfigError(f"grid_metric must be one of {METRIC_NAMES}")
    if not isinstance(run["folds"], int) or isinstance(run["folds"], bool):
        raise ConfigError("folds must be an integer")

    hp_vals, grid = {}, {}
    for name in HP_FIELDS:
        if name not in merged:
            continue
        value = merged[name]
        if isinstance(value, list):
            if name not in GRID_KEYS:
                raise ConfigError(f"only {GRID_KEYS} may hold value lists, not {name!r}")
            if not value:
                raise ConfigError(f"empty grid list for {name!r}")
            grid[name] = value
            hp_vals[name] = value[0]
        else:
            hp_vals[name] = value
    try:
        hp = Hyperparams(**hp_vals)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad hyperparameters: {exc}") from None
    return RunConfig(dataset=run["dataset"], format=run["format"],
                     folds=run["folds"], report_format=run["report_format"],
                     grid_metric=run["grid_metric"], hyperparams=hp,
                     grid=grid, raw=merged)


def load_config(path, overrides: dict | None = None) -> RunConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: not valid JSON ({exc})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{p}: config must be a JSON object")
    return parse_config(raw, overrides)


# ---------------------------------------------------------------------------
# atomic file output and report rendering


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def render_report(report: EvalReport, fmt: str) -> str:
    if fmt == "json":
        return json.dumps(report.to_dict(), indent=2) + "\n"
    lines = [f"# dataset\t{report.dataset}",
             f"# config_hash\t{report.config_hash}",
             f"# wall_seconds\t{report.wall_seconds:.3f}",
             "fold\t" + "\t".join(METRIC_NAMES)]
    for i, fold in enumerate(report.folds):
        lines.append(str(i) + "\t" + "\t".join(f"{fold[m]:.6f}" for m in METRIC_NAMES))
    lines.append("mean\t" + "\t".join(f"{report.mean[m]:.6f}" for m in METRIC_NAMES))
    return "\n".join(lines) + "\n"


def write_report(report: EvalReport, path: Path, fmt: str) -> None:
    _atomic_write(path, render_report(report, fmt))


def write_history(history, path: Path) -> None:
    lines = ["epoch\tL_e\tL_m\tL_c\tL_all"]
    for i, h in enumerate(history):
        lines.append(f"{i}\t{h.L_e!r}\t{h.L_m!r}\t{h.L_c!r}\t{h.L_all!r}")
    _atomic_write(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# checkpoint serialization


def _tensor_entry(name: str, arr: np.ndarray) -> dict:
    a = np.asarray(arr, dtype=np.float64)
    return {"name": name, "shape": list(a.shape), "data": a.reshape(-1).tolist()}


def save_checkpoint(model: TrainedModel, path) -> None:
    tensors = []
    for i, emb in enumerate(model.params.embeddings):
        tensors.append(_tensor_entry(f"W{i}", emb.W))
        tensors.append(_tensor_entry(f"b{i}", emb.b))
    for k, u in enumerate(model.params.metrics.U):
        tensors.append(_tensor_entry(f"U{k}", u))
    tensors.append(_tensor_entry("log_sigma", model.params.log_sigma))
    protos = []
    for k, lp in enumerate(model.prototypes.by_label):
        protos.append({
            "label": k,
            "pos": None if lp.pos is None else np.asarray(lp.pos).tolist(),
            "neg": None if lp.neg is None else np.asarray(lp.neg).tolist(),
        })
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "hyperparams": dataclasses.asdict(model.hyperparams),
        "beta": model.params.embeddings[0].beta,
        "label_has_pos": model.label_has_pos.astype(int).tolist(),
        "label_has_neg": model.label_has_neg.astype(int).tolist(),
        "feature_mean": None if model.feature_mean is None else model.feature_mean.tolist(),
        "feature_scale": None if model.feature_scale is None else model.feature_scale.tolist(),
        "tensors": tensors,
        "prototypes": protos,
    }
    _atomic_write(Path(path), json.dumps(doc) + "\n")


def load_checkpoint(path) -> TrainedModel:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"checkpoint not found: {p}")
    doc = json.loads(p.read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ConfigError(f"{p}: not a recognized checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"{p}: unsupported checkpoint version {doc.get('version')}")
    hp = Hyperparams(**doc["hyperparams"])
    tensors = {t["name"]: np.array(t["data"], dtype=np.float64).reshape(t["shape"])
               for t in doc["tensors"]}
    beta = doc["beta"]
    embeddings = []
    for i in itertools.count():
        if f"W{i}" not in tensors:
            break
        embeddings.append(EmbeddingParams(tensors[f"W{i}"], tensors[f"b{i}"], beta))
    n_labels = len(doc["label_has_pos"])
    metrics = DistanceMetricParams([tensors[f"U{k}"] for k in range(n_labels)])
    params = ModelParams(embeddings, metrics, np.array(float(tensors["log_sigma"])))
    by_label = []
    for entry in doc["prototypes"]:
        by_label.append(LabelPrototypes(
            None if entry["pos"] is None else np.array(entry["pos"], dtype=np.float64),
            None if entry["neg"] is None else np.array(entry["neg"], dtype=np.float64)))
    return TrainedModel(
        hyperparams=hp, params=params, prototypes=PrototypeSet(by_label),
        label_has_pos=np.array(doc["label_has_pos"], dtype=bool),
        label_has_neg=np.array(doc["label_has_neg"], dtype=bool),
        feature_mean=None if doc["feature_mean"] is None else np.array(doc["feature_mean"]),
        feature_scale=None if doc["feature_scale"] is None else np.array(doc["feature_scale"]),
        history=[])


# ---------------------------------------------------------------------------
# commands


def _load_ds(config: RunConfig) -> Dataset:
    return load_dataset(config.dataset, config.format)


def cmd_train(config: RunConfig, out: Path) -> int:
    ds = _load_ds(config)
    model = train(ds, config.hyperparams)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(model, out / "checkpoint.json")
    write_history(model.history, out / "history.tsv")
    print(f"checkpoint -> {out / 'checkpoint.json'}")
    return EXIT_OK


def cmd_eval(config: RunConfig, checkpoint: str, out: Path) -> int:
    ds = _load_ds(config)
    model = load_checkpoint(checkpoint)
    t0 = time.perf_counter()
    metrics = evaluate_model(model, ds)
    report = EvalReport(dataset=config.dataset, config_hash=config.config_hash,
                        folds=[metrics], wall_seconds=time.perf_counter() - t0)
    out.mkdir(parents=True, exist_ok=True)
    ext = "json" if config.report_format == "json" else "tsv"
    write_report(report, out / f"eval.{ext}", config.report_format)
    for name in METRIC_NAMES:
        print(f"{name}: {metrics[name]:.4f}")
    return EXIT_OK


def run_cv(config: RunConfig, hp: Hyperparams) -> EvalReport:
    """K-fold cross-validation for one hyperparameter point."""
    if config.folds < 2:
        raise ConfigError(f"cv needs folds >= 2, got {config.folds}")
    ds = _load_ds(config)
    split_seed = derive_seed(hp.seed, "split")
    t0 = time.perf_counter()
    folds = []
    for i, (tr, te) in enumerate(kfold_split(ds, config.folds, split_seed)):
        fold_hp = dataclasses.replace(hp, seed=derive_seed(hp.seed, "fold", i))
        model = train(tr, fold_hp)
        folds.append(evaluate_model(model, te))
    return EvalReport(dataset=config.dataset, config_hash=config.config_hash,
                      folds=folds, wall_seconds=time.perf_counter() - t0)


def cmd_cv(config: RunConfig, out: Path) -> int:
    report = run_cv(config, config.hyperparams)
    out.mkdir(parents=True, exist_ok=True)
    ext = "json" if config.report_format == "json" else "tsv"
    for i, fold in enumerate(report.folds):
        fold_report = EvalReport(dataset=report.dataset, config_hash=report.config_hash,
                                 folds=[fold])
        write_report(fold_report, out / f"cv_fold{i}.{ext}", config.report_format)
    write_report(report, out / f"cv_aggregate.{ext}", config.report_format)
    for name, value in report.mean.items():
        print(f"{name}: {value:.4f}")
    print(f"reports -> {out}")
    return EXIT_OK


def cmd_grid(config: RunConfig, out: Path) -> int:
    keys = [k for k in GRID_KEYS if k in config.grid]
    values = [config.grid[k] for k in keys]
    points = list(itertools.product(*values)) if keys else [()]
    rows = []
    for point in points:
        hp = dataclasses.replace(config.hyperparams, **dict(zip(keys, point)))
        report = run_cv(config, hp)
        rows.append({**dict(zip(keys, point)), **report.mean,
                     "wall_seconds": report.wall_seconds})
    metric = config.grid_metric
    descending = metric != "ranking_loss"
    best = max(rows, key=lambda r: r[metric]) if descending else \
        min(rows, key=lambda r: r[metric])

    out.mkdir(parents=True, exist_ok=True)
    header = keys + list(METRIC_NAMES) + ["wall_seconds"]
    lines = [f"# config_hash\t{config.config_hash}", "\t".join(header)]
    for r in rows:
        lines.append("\t".join(f"{r[h]:.6g}" if isinstance(r[h], float) else str(r[h])
                               for h in header))
    _atomic_write(out / "grid.tsv", "\n".join(lines) + "\n")
    _atomic_write(out / "grid_best.json", json.dumps(
        {"config_hash": config.config_hash, "metric": metric, "best": best},
        indent=2) + "\n")
    print(f"{len(rows)} grid points -> {out / 'grid.tsv'}")
    print(f"best {metric}: {best[metric]:.4f} at "
          + ", ".join(f"{k}={best[k]}" for k in keys))
    return EXIT_OK


def cmd_gradcheck(config: RunConfig | None, out: Path | None,
                  trials: int, tolerance: float, seed: int) -> int:
    hp = config.hyperparams if config else Hyperparams(seed=seed)
    report = gradient_check(hp, trial_count=trials, tolerance=tolerance, seed=seed)
    for line in report.lines():
        print(line)
    print("gradient check:", "PASS" if report.passed else "FAIL")
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        _atomic_write(out / "gradcheck.json", json.dumps(
            {"groups": report.groups, "tolerance": report.tolerance,
             "trials": report.trials, "passed": report.passed}, indent=2) + "\n")
    return EXIT_OK


def cmd_export_protos(checkpoint: str, out: Path) -> int:
    model = load_checkpoint(checkpoint)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "prototypes.tsv"
    export_prototypes(path, model.prototypes)
    n_rows = sum((0 if lp.pos is None else len(lp.pos))
                 + (0 if lp.neg is None else len(lp.neg))
                 for lp in model.prototypes.by_label)
    print(f"{n_rows} prototypes -> {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pnml",
        description="Prototype-based multi-label classification toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="JSON run config")
        p.add_argument("--out", default="runs", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--mode", choices=MODES, default=None, help="override config mode")

    common(sub.add_parser("train", help="train on the full dataset"))
    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    common(p_eval)
    p_eval.add_argument("--checkpoint", required=True)
    common(sub.add_parser("cv", help="k-fold cross-validation"))
    common(sub.add_parser("grid", help="grid search over lambda1/lambda2/alpha lists"))
    p_gc = sub.add_parser("gradcheck", help="verify analytic gradients")
    common(p_gc, config_required=False)
    p_gc.add_argument("--trials", type=int, default=10)
    p_gc.add_argument("--tolerance", type=float, default=1e-3)
    p_ex = sub.add_parser("export-protos", help="dump prototype vectors")
    p_ex.add_argument("--checkpoint", required=True)
    p_ex.add_argument("--out", default="runs")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "export-protos":
            return cmd_export_protos(args.checkpoint, Path(args.out))
        overrides = {"seed": getattr(args, "seed", None),
                     "mode": getattr(args, "mode", None)}
        config = None
        if args.config is not None:
            config = load_config(args.config, overrides)
        if args.command == "gradcheck":
            seed = args.seed if args.seed is not None else 0
            return cmd_gradcheck(config, Path(args.out), args.trials,
                                 args.tolerance, seed)
        if config is None:
            raise ConfigError("--config is required")
        out = Path(args.out)
        if args.command == "train":
            return cmd_train(config, out)
        if args.command == "eval":
            return cmd_eval(config, args.checkpoint, out)
        if args.command == "cv":
            return cmd_cv(config, out)
        if args.command == "grid":
            return cmd_grid(config, out)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, DatasetError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingDivergenceError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
