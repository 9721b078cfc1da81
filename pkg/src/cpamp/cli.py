"""Command-line experiment runner.

Subcommands: generate, run, se, posterior, evaluate, verify.
Exit codes: 0 success, 1 verify mismatch, 2 config error, 3 numerical
divergence, 4 I/O error.

Seeds: the dataset / trial for delta index d and trial k uses
derive_seed(derive_seed(master, d), k), with derive_seed the SeedSequence hash
in cpamp.seeds.
"""

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from cpamp.amp import AmpDivergenceError, run_amp
from cpamp.config import ConfigError, build_model, build_signal, load_config
from cpamp.evaluation import Scenario, evaluate_props
from cpamp.inference import point_estimate, posterior_over_configs
from cpamp.model import fractions_to_eta, generate_dataset, load_dataset, save_dataset
from cpamp.priors import sample_signal_matrix
from cpamp.seeds import derive_seed
from cpamp.state_evolution import SeError, ensemble_se, oracle_se

EXIT_OK, EXIT_MISMATCH, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 1, 2, 3, 4


def scenario_for(cfg, delta):
    cp, est = cfg["changepoint"], cfg["estimation"]
    return Scenario(
        model=build_model(cfg), p=cfg["p"], delta=float(delta),
        signal=build_signal(cfg, delta), fractions=tuple(cfg["truth"]["fractions"]),
        L=cfg["L"], min_separation_frac=cp["min_separation_frac"],
        count_weights=None if cp["count_weights"] is None else tuple(cp["count_weights"]),
        grid_stride=cp["grid_stride"], method=est["method"], t=cfg["amp"]["max_iter"],
        mc_samples=cfg["se"]["mc_samples"], oracle_mc=cfg["se"]["oracle_mc"],
        posterior=est["posterior"], posterior_mc=est["posterior_mc"])


def _dir(args, cfg):
    out = Path(args.out or cfg.get("out") or "results")
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(cfg, indent=2))
    return out


def _plan(cfg):
    lines = [f"model={cfg['model']['variant']} p={cfg['p']} L={cfg['L']} "
             f"trials={cfg['trials']} seed={cfg['seed']}"]
    for d_idx, delta in enumerate(cfg["deltas"]):
        sc = scenario_for(cfg, delta)
        ncand = len(sc.prior().changepoint.table[0])
        lines.append(f"  delta={delta} n={sc.n} candidates={ncand} "
                     f"seed={derive_seed(cfg['seed'], d_idx)}")
    return "\n".join(lines)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_generate(cfg, args):
    out = _dir(args, cfg)
    model = build_model(cfg)
    for d_idx, delta in enumerate(cfg["deltas"]):
        seed = derive_seed(cfg["seed"], d_idx)
        sc = scenario_for(cfg, delta)
        B = sample_signal_matrix(sc.signal, sc.p, sc.L, derive_seed(seed, 0))
        ds = generate_dataset(sc.n, sc.p, model, B, fractions_to_eta(sc.fractions, sc.n),
                              derive_seed(seed, 1))
        save_dataset(ds, out / f"delta_{delta:g}")
    return out


def _run_all(cfg, args, artifacts):
    reports = []
    for d_idx, delta in enumerate(cfg["deltas"]):
        rep = evaluate_props(cfg["trials"], scenario_for(cfg, delta),
                             seed=derive_seed(cfg["seed"], d_idx),
                             workers=args.workers, artifacts=artifacts)
        reports.append(rep)
    return reports


def _trial_record(r):
    return {k: v for k, v in r.items() if k not in ("diagnostics", "posterior_csv")}


def cmd_run(cfg, args):
    out = _dir(args, cfg)
    reports = _run_all(cfg, args, artifacts=True)
    haus, counts = [], []
    for rep in reports:
        d = rep["delta"]
        sub = out / f"delta_{d:g}"
        sub.mkdir(exist_ok=True)
        (sub / "se_trajectory.json").write_text(rep["se_trajectory"].to_json())
        with open(sub / "trials.jsonl", "w") as fh:
            for k, r in enumerate(rep["trials"]):
                fh.write(json.dumps(_trial_record(r)) + "\n")
                (sub / f"diagnostics_{k}.jsonl").write_text(r["diagnostics"])
                (sub / f"posterior_{k}.csv").write_text(r["posterior_csv"])
        haus.append([d, rep["hausdorff_amp"]["mean"], rep["hausdorff_amp"]["sd"],
                     rep["hausdorff_se"]["mean"]])
        counts.append([d, rep["count_se"]["mean"], rep["count_amp"]["mean"],
                       rep["count_amp"]["sd"]])
    _write_csv(out / "hausdorff.csv", ["delta", "hausdorff_mean", "hausdorff_sd",
                                       "se_prediction"], haus)
    _write_csv(out / "counts.csv", ["delta", "count_theory", "count_mean", "count_sd"], counts)
    return out


def cmd_evaluate(cfg, args):
    out = _dir(args, cfg)
    reports = _run_all(cfg, args, artifacts=False)
    rows = []
    for rep in reports:
        rep.pop("se_trajectory")
        row = [rep["delta"], rep["n"], rep["hausdorff_amp"]["mean"], rep["hausdorff_se"]["mean"],
               rep["count_amp"]["mean"], rep["count_se"]["mean"], rep["mse_amp"]["mean"],
               rep["mse_se"]["mean"]]
        row.append(rep["posterior_gap"]["mean"] if "posterior_gap" in rep else "")
        rows.append(row)
    (out / "report.json").write_text(json.dumps(reports, indent=2))
    _write_csv(out / "report.csv", ["delta", "n", "hausdorff_amp", "hausdorff_se", "count_amp",
                                    "count_se", "mse_amp", "mse_se", "posterior_gap"], rows)
    return out


def cmd_se(cfg, args):
    out = _dir(args, cfg)
    for d_idx, delta in enumerate(cfg["deltas"]):
        sc = scenario_for(cfg, delta)
        prior = sc.prior()
        seed = derive_seed(cfg["seed"], d_idx)
        traj = ensemble_se(prior, sc.model, sc.delta, sc.t, sc.mc_samples, seed)
        if cfg["se"]["mode"] == "oracle":
            traj = oracle_se(prior, sc.model, sc.delta, sc.t, sc.fractions, ensemble=traj,
                             mc_samples=sc.mc_samples, seed=seed)   # common random numbers
        (out / f"se_delta_{delta:g}.json").write_text(traj.to_json())
    return out


def cmd_posterior(cfg, args):
    if not args.data:
        raise ConfigError("config:0: data: posterior needs --data DIR")
    out = _dir(args, cfg)
    ds = load_dataset(args.data)
    sc = scenario_for(cfg, ds.delta)
    if ds.p != sc.p:
        raise ConfigError(f"config:0: p: dataset has p={ds.p}, config has {sc.p}")
    prior = sc.prior()
    state, diag, traj = run_amp(ds, prior, sc.model, sc.t, cfg["amp"]["tol"],
                                derive_seed(cfg["seed"], 0), sc.mc_samples)
    table = posterior_over_configs(state.theta, ds.y, prior.changepoint, traj[state.t], sc.model)
    est = point_estimate(state.theta, ds.y, prior.changepoint, traj[state.t], sc.model, sc.method)
    (out / "posterior.csv").write_text(table.to_csv())
    (out / "diagnostics.jsonl").write_text(diag.to_jsonl())
    (out / "se_trajectory.json").write_text(traj.to_json())
    (out / "estimate.json").write_text(json.dumps(
        {"eta_hat": est.eta_hat.tolist(), "count": est.count, "method": est.method}))
    return out


def cmd_verify(cfg, args):
    """Re-run trial 0 of the first delta and compare with the stored record."""
    out = Path(args.out or "results")
    stored_cfg = json.loads((out / "config.json").read_text())
    d = stored_cfg["deltas"][0]
    lines = (out / f"delta_{d:g}" / "trials.jsonl").read_text().splitlines()
    stored = json.loads(lines[0])
    stored_cfg = {**stored_cfg, "trials": 1, "deltas": [d]}
    rep = evaluate_props(1, scenario_for(stored_cfg, d),
                         seed=derive_seed(stored_cfg["seed"], 0))
    fresh = json.loads(json.dumps(_trial_record(rep["trials"][0])))
    diffs = {k: (stored[k], fresh.get(k)) for k in stored if stored[k] != fresh.get(k)}
    if diffs:
        print(json.dumps({"mismatch": diffs}, indent=2))
        return None
    print("verify: trial 0 reproduced exactly")
    return out


COMMANDS = {"generate": cmd_generate, "run": cmd_run, "se": cmd_se,
            "posterior": cmd_posterior, "evaluate": cmd_evaluate, "verify": cmd_verify}


def parser():
    ap = argparse.ArgumentParser(prog="cpamp", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="JSON experiment config")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("--seed", type=int, help="master seed (overrides config)")
    ap.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    ap.add_argument("--dry-run", action="store_true", help="validate and print the plan")
    ap.add_argument("--data", help="dataset directory (posterior)")
    return ap


def main(argv=None):
    args = parser().parse_args(argv)
    try:
        if args.command == "verify":
            cfg = None
        else:
            cfg = load_config(args.config, seed=args.seed)
            if args.dry_run:
                print(_plan(cfg))
                return EXIT_OK
        result = COMMANDS[args.command](cfg, args)
        return EXIT_OK if result is not None else EXIT_MISMATCH
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (AmpDivergenceError, SeError, FloatingPointError) as err:
        print(f"error: numerical divergence: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    except OSError as err:
        print(f"error: I/O: {err}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
