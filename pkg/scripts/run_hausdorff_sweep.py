"""Normalized Hausdorff distance of AMP vs its SE prediction over a delta grid
(linear model, two change points at n/3 and 8n/15)."""

import argparse
import csv
import sys

import numpy as np

from cpamp.evaluation import Scenario, evaluate_props
from cpamp.model import ModelKind
from cpamp.priors import GaussianRows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--p", type=int, default=400)
    ap.add_argument("--deltas", type=float, nargs="+", default=[0.5, 1.0, 1.5, 2.0, 2.5])
    ap.add_argument("--fractions", type=float, nargs="+", default=[1 / 3, 8 / 15])
    ap.add_argument("--trials", type=int, default=10)
    ap.add_argument("--t", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["delta", "hausdorff_mean", "hausdorff_sd", "se_prediction", "se_sd"])
    for k, delta in enumerate(args.deltas):
        sc = Scenario(model=ModelKind("linear", 0.1), p=args.p, delta=delta,
                      signal=GaussianRows(np.eye(3)), fractions=tuple(args.fractions), t=args.t)
        rep = evaluate_props(args.trials, sc, seed=args.seed + k, workers=args.workers)
        h, s = rep["hausdorff_amp"], rep["hausdorff_se"]
        w.writerow([delta, h["mean"], h["sd"], s["mean"], s["sd"]])
        sys.stdout.flush()


if __name__ == "__main__":
    main()
