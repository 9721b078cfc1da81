"""Experiment configuration: JSON file -> validated dataclasses."""

import json
import os
import re
from dataclasses import dataclass, field

import numpy as np

from cpamp.model import ModelKind
from cpamp.priors import BernoulliGaussian, DiscreteRows, GaussianRows, SparseDifference

ENV_PREFIX = "CPAMP_"


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "model": {"variant": "linear", "noise_sd": 0.1},
    "p": 200,
    "deltas": [1.0],
    "L": 3,
    "signal": {"type": "gaussian", "scale": 1.0, "scale_by_delta": False},
    "truth": {"fractions": [1 / 3, 8 / 15]},
    "changepoint": {"min_separation_frac": 0.2, "count_weights": None, "grid_stride": None},
    "amp": {"max_iter": 10, "tol": 0.0},
    "se": {"mc_samples": 1000, "oracle_mc": 20000, "mode": "ensemble"},
    "estimation": {"method": "posterior_argmax", "posterior": False, "posterior_mc": 1000},
    "trials": 10,
    "seed": 0,
}


def _merge(base, over):
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(base[k], v) if isinstance(v, dict) and isinstance(base.get(k), dict) else v
    return out


def _key(node, part):
    """Existing key matching `part` case-insensitively (env names are upper case)."""
    return next((k for k in node if k.lower() == part), part)


def apply_env(cfg, environ=None):
    """CPAMP_A__B=value sets cfg['a']['b']; values are parsed as JSON when possible."""
    environ = os.environ if environ is None else environ
    for key, raw in environ.items():
        if not key.startswith(ENV_PREFIX):
            continue
        path = key[len(ENV_PREFIX):].lower().split("__")
        try:
            val = json.loads(raw)
        except json.JSONDecodeError:
            val = raw
        node = cfg
        for part in path[:-1]:
            node = node.setdefault(_key(node, part), {})
        node[_key(node, path[-1])] = val
    return cfg


def _line_of(text, key):
    if text:
        for i, line in enumerate(text.splitlines(), 1):
            if re.search(rf'"{re.escape(key)}"\s*:', line):
                return i
    return 0


def load_config(path=None, text=None, environ=None, seed=None):
    if path is not None:
        text = open(path).read()
    raw = {}
    if text:
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as err:
            raise ConfigError(f"config:{err.lineno}: invalid JSON: {err.msg}") from None
    cfg = apply_env(_merge(DEFAULTS, raw), environ)
    if seed is not None:
        cfg["seed"] = seed
    validate(cfg, text)
    return cfg


def validate(cfg, text=None):
    def fail(key, msg):
        raise ConfigError(f"config:{_line_of(text, key)}: {key}: {msg}")

    m = cfg["model"]
    if m.get("variant") not in ("linear", "logistic", "relu"):
        fail("variant", "must be linear, logistic or relu")
    sd = m.get("noise_sd", 0.0)
    if not isinstance(sd, (int, float)) or sd < 0:
        fail("noise_sd", "must be a nonnegative number")
    if m["variant"] == "relu" and sd <= 0:
        fail("noise_sd", "ReLU needs a positive noise_sd")
    if not isinstance(cfg["p"], int) or cfg["p"] < 1:
        fail("p", "must be a positive integer")
    if not cfg["deltas"] or any(not isinstance(d, (int, float)) or d <= 0 for d in cfg["deltas"]):
        fail("deltas", "must be a nonempty list of positive numbers")
    L = cfg["L"]
    if not isinstance(L, int) or L < 1:
        fail("L", "must be a positive integer")
    fr = cfg["truth"]["fractions"]
    if len(fr) > L - 1 or any(not 0 < a < 1 for a in fr) or list(fr) != sorted(fr):
        fail("fractions", f"need at most {L - 1} increasing values in (0, 1)")
    cw = cfg["changepoint"]["count_weights"]
    if cw is not None and (len(cw) != L or abs(sum(cw) - 1) > 1e-9 or min(cw) < 0):
        fail("count_weights", f"must be {L} probabilities")
    if cfg["estimation"]["method"] not in ("l2_match", "posterior_argmax", "greedy"):
        fail("method", "unknown estimator")
    if cfg["se"]["mc_samples"] < 10:
        fail("mc_samples", "must be at least 10")
    if cfg["se"]["mode"] not in ("ensemble", "oracle"):
        fail("mode", "must be ensemble or oracle")
    if not isinstance(cfg["trials"], int) or cfg["trials"] < 1:
        fail("trials", "must be a positive integer")
    if cfg["amp"]["max_iter"] < 1:
        fail("max_iter", "must be at least 1")
    try:
        build_signal(cfg, cfg["deltas"][0])
    except (ValueError, KeyError) as err:
        fail("signal", str(err))


def build_model(cfg):
    m = cfg["model"]
    return ModelKind(m["variant"], 0.0 if m["variant"] == "logistic" else m["noise_sd"])


def build_signal(cfg, delta):
    s, L = cfg["signal"], cfg["L"]
    scale = s.get("scale", 1.0) * (delta if s.get("scale_by_delta") else 1.0)
    kind = s.get("type", "gaussian")
    cov = np.asarray(s["cov"], float) * (delta if s.get("scale_by_delta") else 1.0) \
        if "cov" in s else scale * np.eye(L)
    if kind == "gaussian":
        return GaussianRows(cov)
    if kind == "bernoulli_gaussian":
        return BernoulliGaussian(s["alpha"], cov)
    if kind == "discrete":
        return DiscreteRows(np.asarray(s["atoms"], float), np.asarray(s["weights"], float))
    if kind == "sparse_difference":
        f = delta if s.get("scale_by_delta") else 1.0
        return SparseDifference(s["kappa2"] * f, s["sigma_w2"] * f, s["alpha"], L)
    raise ValueError(f"unknown signal type {kind!r}")
