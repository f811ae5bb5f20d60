#!/usr/bin/env python3
"""5-fold cross-validation on the bundled emotions dataset, both modes.

Reproduces the desk-scale benchmark numbers. Single mode takes about a
minute; the adaptive mode a few minutes. Prints a metric table and one
line per mode suitable for pasting into a results log.

Usage:
    python scripts/run_emotions_cv.py [--alpha 0.1] [--seed 0] [--folds 5]
"""
import argparse
import dataclasses
import time

import numpy as np

from pnml.datasets import derive_seed, kfold_split, load_dataset
from pnml.evaluation import METRIC_NAMES, evaluate_model
from pnml.training import Hyperparams, train


def cross_validate(ds, hp, seed, folds):
    folds_out = []
    t0 = time.perf_counter()
    for i, (tr, te) in enumerate(kfold_split(ds, folds, derive_seed(seed, "split"))):
        model = train(tr, dataclasses.replace(hp, seed=derive_seed(seed, "fold", i)))
        folds_out.append(evaluate_model(model, te))
    wall = time.perf_counter() - t0
    return {n: float(np.mean([f[n] for f in folds_out])) for n in METRIC_NAMES}, wall


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--data", default="data/emotions")
    ap.add_argument("--alpha", type=float, default=0.1)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--folds", type=int, default=5)
    args = ap.parse_args()

    ds = load_dataset(args.data)
    print(f"dataset: {args.data}  N={ds.n_instances} D={ds.n_features} K={ds.n_labels}")
    base = dict(r_pos=1.0, r_neg=0.5, lambda1=1e-5, lambda2=1e-5)
    header = "mode      " + "".join(f"{m:>20s}" for m in METRIC_NAMES) + "   seconds"
    print(header)
    for mode in ("single", "multiple"):
        hp = Hyperparams(mode=mode, alpha=args.alpha, **base)
        mean, wall = cross_validate(ds, hp, args.seed, args.folds)
        row = f"{mode:10s}" + "".join(f"{mean[m]:20.4f}" for m in METRIC_NAMES)
        print(row + f"{wall:10.1f}")


if __name__ == "__main__":
    main()
