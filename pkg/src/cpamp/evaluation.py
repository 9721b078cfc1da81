"""Trial harness comparing the AMP pipeline with its state-evolution limit."""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from cpamp.amp import run_amp
from cpamp.inference import (ExactLikelihood, hausdorff, point_estimate,
                             posterior_over_configs)
from cpamp.model import ModelKind, eta_to_psi, fractions_to_eta, generate_dataset
from cpamp.priors import ChangePointPrior, NoisePrior, PriorSpec, sample_signal_matrix
from cpamp.seeds import derive_seed
from cpamp.state_evolution import ensemble_se, oracle_se, sample_limit_iterates


@dataclass
class Scenario:
    model: ModelKind
    p: int
    delta: float
    signal: object                 # signal prior used for truth and by AMP
    fractions: tuple               # true change-point fractions
    L: int = 3
    min_separation_frac: float = 0.2
    count_weights: tuple | None = None
    grid_stride: int | None = None
    method: str = "posterior_argmax"
    t: int = 10
    mc_samples: int = 1000
    oracle_mc: int = 20000
    posterior: bool = False
    posterior_mc: int = 1000

    @property
    def n(self):
        return int(round(self.delta * self.p))

    def prior(self):
        n = self.n
        stride = self.grid_stride or max(1, n // 200)
        cp = ChangePointPrior(n, self.L, max(1, int(self.min_separation_frac * n)),
                              self.count_weights, stride)
        noise = (NoisePrior("uniform") if self.model.variant == "logistic"
                 else NoisePrior("gaussian", self.model.noise_sd))
        return PriorSpec(self.signal, noise, cp)


def _trial(args):
    sc, prior, ens, exact, seed, artifacts = args
    n, p, t, model = sc.n, sc.p, sc.t, sc.model
    B = sample_signal_matrix(sc.signal, p, sc.L, derive_seed(seed, 0))
    eta = fractions_to_eta(sc.fractions, n)
    psi = eta_to_psi(eta, n, sc.L)
    ds = generate_dataset(n, p, model, B, eta, derive_seed(seed, 1))
    state, diag, _ = run_amp(ds, prior, model, t, 0.0, derive_seed(seed, 2), se=ens)
    se_t = ens[t]
    est = point_estimate(state.theta, ds.y, prior.changepoint, se_t, model, sc.method)
    orc = oracle_se(prior, model, sc.delta, t, sc.fractions, ensemble=ens,
                    mc_samples=sc.oracle_mc, seed=derive_seed(seed, 3), B=B)
    V, _, _, u = sample_limit_iterates(orc[t], B, psi, model, n, derive_seed(seed, 4))
    est_se = point_estimate(V, u, prior.changepoint, se_t, model, sc.method)
    out = {
        "seed": seed,
        "mse_amp": diag.records[-1]["mse"], "mse_se": float(orc[t].mse),
        "hausdorff_amp": hausdorff(eta, est.eta_hat, n) / n,
        "hausdorff_se": hausdorff(eta, est_se.eta_hat, n) / n,
        "count_amp": est.count, "count_se": est_se.count,
        "eta_amp": est.eta_hat.tolist(), "eta_se": est_se.eta_hat.tolist(),
    }
    if artifacts:
        out["diagnostics"] = diag.to_jsonl()
        out["posterior_csv"] = posterior_over_configs(
            state.theta, ds.y, prior.changepoint, se_t, model).to_csv()
    if exact is not None:
        lhs = posterior_over_configs(state.theta, ds.y, prior.changepoint, se_t, model,
                                     "exact", exact)
        rhs = posterior_over_configs(V, u, prior.changepoint, se_t, model, "exact", exact)
        out["posterior_gap"] = float(np.mean(np.abs(lhs.probs - rhs.probs)))
        out["posterior_mass_truth_amp"] = float(
            lhs.probs[np.all(lhs.etas == _pad(eta, n, sc.L), axis=1)].sum())
    return out


def _pad(eta, n, L):
    out = np.full(L - 1, n + 1)
    out[: len(eta)] = eta
    return out


def _summary(vals):
    a = np.asarray(vals, float)
    return {"mean": float(a.mean()), "sd": float(a.std(ddof=0))}


def evaluate_props(trials, scenario, t=None, seed=0, workers=1, artifacts=False):
    """LHS (AMP) and RHS (SE-sampled) estimates over independent trials."""
    sc = scenario if t is None else Scenario(**{**asdict_shallow(scenario), "t": t})
    prior = sc.prior()
    ens = ensemble_se(prior, sc.model, sc.delta, sc.t, sc.mc_samples, derive_seed(seed, 99))
    exact = (ExactLikelihood(prior, sc.model, sc.delta, sc.t, ens, sc.posterior_mc,
                             derive_seed(seed, 98)) if sc.posterior else None)
    if exact is not None:
        exact.params(prior.changepoint.table[0])  # fill the cache once
    jobs = [(sc, prior, ens, exact, derive_seed(seed, k), artifacts) for k in range(trials)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            rows = list(pool.map(_trial, jobs))
    else:
        rows = [_trial(j) for j in jobs]
    rep = {"n": sc.n, "p": sc.p, "delta": sc.delta, "trials": rows,
           "se_trajectory": ens}
    for key in ("hausdorff_amp", "hausdorff_se", "count_amp", "count_se",
                "mse_amp", "mse_se"):
        rep[key] = _summary([r[key] for r in rows])
    rep["mse_rel_err"] = [abs(r["mse_amp"] - r["mse_se"]) / r["mse_se"] for r in rows]
    if sc.posterior:
        rep["posterior_gap"] = _summary([r["posterior_gap"] for r in rows])
    return rep


def asdict_shallow(obj):
    return {f: getattr(obj, f) for f in obj.__dataclass_fields__}
