"""Ensemble and oracle state-evolution trajectories for one scenario, written
as JSON (no data, no AMP)."""

import argparse
import json

import numpy as np

from cpamp.model import ModelKind
from cpamp.priors import ChangePointPrior, GaussianRows, NoisePrior, PriorSpec
from cpamp.state_evolution import ensemble_se, oracle_se


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--model", choices=["linear", "logistic", "relu"], default="linear")
    ap.add_argument("--sigma", type=float, default=0.1)
    ap.add_argument("--n", type=int, default=400)
    ap.add_argument("--delta", type=float, default=1.0)
    ap.add_argument("--scale", type=float, default=1.0, help="signal prior N(0, scale I)")
    ap.add_argument("--fractions", type=float, nargs="+", default=[1 / 3, 8 / 15])
    ap.add_argument("--T", type=int, default=15)
    ap.add_argument("--mc", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="se.json")
    args = ap.parse_args()

    L = 3
    model = ModelKind(args.model, 0.0 if args.model == "logistic" else args.sigma)
    noise = NoisePrior("uniform") if args.model == "logistic" else NoisePrior("gaussian", args.sigma)
    prior = PriorSpec(GaussianRows(args.scale * np.eye(L)), noise,
                      ChangePointPrior(args.n, L, args.n // 5, None, max(1, args.n // 200)))
    ens = ensemble_se(prior, model, args.delta, args.T, args.mc, args.seed)
    orc = oracle_se(prior, model, args.delta, args.T, args.fractions, ensemble=ens,
                    mc_samples=args.mc, seed=args.seed)
    with open(args.out, "w") as fh:
        json.dump({"ensemble": json.loads(ens.to_json()), "oracle": json.loads(orc.to_json())},
                  fh)
    for a, b in zip(ens.params, orc.params):
        print(f"t={a.t:2d} ensemble mse={a.mse:.4f} oracle mse={b.mse:.4f}")


if __name__ == "__main__":
    main()
