"""Estimated number of change points for one true change point at 0.6n
(ReLU sigma=0.3 and logistic rho=50I, delta=1.25, p=600)."""

import argparse
import csv
import sys

import numpy as np

from cpamp.evaluation import Scenario, evaluate_props
from cpamp.model import ModelKind
from cpamp.priors import GaussianRows

DELTA = 1.25
ROWS = {
    "relu_sigma_0.1": (ModelKind("relu", 0.1), np.eye(3)),
    "relu_sigma_0.3": (ModelKind("relu", 0.3), np.eye(3)),
    "logistic_rho_20I": (ModelKind("logistic"), 20 * DELTA * np.eye(3)),
    "logistic_rho_50I": (ModelKind("logistic"), 50 * DELTA * np.eye(3)),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", nargs="+", default=list(ROWS), choices=list(ROWS))
    ap.add_argument("--p", type=int, default=600)
    ap.add_argument("--trials", type=int, default=10)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--workers", type=int, default=1)
    args = ap.parse_args()

    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["setting", "delta", "count_theory", "count_mean", "count_sd"])
    for name in args.rows:
        model, cov = ROWS[name]
        sc = Scenario(model=model, p=args.p, delta=DELTA, signal=GaussianRows(cov),
                      fractions=(0.6,), min_separation_frac=0.1,
                      count_weights=(1 / 3, 1 / 3, 1 / 3))
        rep = evaluate_props(args.trials, sc, seed=args.seed, workers=args.workers)
        w.writerow([name, DELTA, rep["count_se"]["mean"], rep["count_amp"]["mean"],
                    rep["count_amp"]["sd"]])
        sys.stdout.flush()


if __name__ == "__main__":
    main()
