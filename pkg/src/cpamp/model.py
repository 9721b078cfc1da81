"""Change-point GLM: output functions, the psi <-> eta map, synthetic data."""

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import expit

MODELS = ("linear", "logistic", "relu")


@dataclass(frozen=True)
class ModelKind:
    variant: str
    noise_sd: float = 0.0

    def __post_init__(self):
        if self.variant not in MODELS:
            raise ValueError(f"unknown model variant {self.variant!r}")
        if not np.isfinite(self.noise_sd) or self.noise_sd < 0:
            raise ValueError("noise_sd must be a finite nonnegative number")
        if self.variant == "logistic" and self.noise_sd != 0:
            raise ValueError("logistic model takes no noise_sd")

    def sample_noise(self, rng, size):
        if self.variant == "logistic":
            return rng.uniform(0.0, 1.0, size)
        return self.noise_sd * rng.standard_normal(size)

    def q(self, z, eps):
        """Output function y = q(z, eps)."""
        if self.variant == "linear":
            return z + eps
        if self.variant == "relu":
            return np.maximum(z, 0.0) + eps
        return (eps <= expit(z)).astype(float)


def _check_eta(eta, n):
    eta = np.asarray(eta, dtype=np.int64).ravel()
    eta = eta[eta != n + 1]  # padding for unused slots
    if eta.size and (eta.min() < 2 or eta.max() > n):
        raise ValueError(f"change points must lie in [2, {n}], got {eta.tolist()}")
    if np.any(np.diff(eta) <= 0):
        raise ValueError(f"change points must be strictly increasing, got {eta.tolist()}")
    return eta


def eta_to_psi(eta, n, L):
    """Labels psi_i = l (1-based) for i in [eta_{l-1}, eta_l)."""
    eta = _check_eta(eta, n)
    if eta.size > L - 1:
        raise ValueError(f"{eta.size} change points exceed L-1 = {L - 1}")
    psi = np.ones(n, dtype=np.int64)
    for c in eta:
        psi[c - 1:] += 1
    return psi


def psi_to_eta(psi):
    """Indices (1-based) at which the label increments."""
    psi = np.asarray(psi, dtype=np.int64).ravel()
    if psi.size == 0 or psi[0] != 1:
        raise ValueError("psi must start with label 1")
    d = np.diff(psi)
    if np.any((d != 0) & (d != 1)):
        raise ValueError("psi must be nondecreasing with unit steps")
    return np.flatnonzero(d) + 2


def pad_eta(eta, n, L):
    out = np.full(L - 1, n + 1, dtype=np.int64)
    eta = np.asarray(eta, dtype=np.int64)
    out[: eta.size] = eta
    return out


def fractions_to_eta(fractions, n):
    """Change points at round(alpha * n) + 1 for interior fractions alpha."""
    return np.array([int(round(a * n)) + 1 for a in fractions], dtype=np.int64)


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    model: ModelKind
    seed: int | None = None
    B: np.ndarray | None = None
    psi: np.ndarray | None = None
    eps: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def delta(self):
        return self.n / self.p

    @property
    def eta(self):
        return None if self.psi is None else psi_to_eta(self.psi)


def generate_dataset(n, p, model, B, eta, seed):
    B = np.asarray(B, dtype=float)
    if B.ndim != 2 or B.shape[0] != p:
        raise ValueError(f"B must have shape ({p}, L), got {B.shape}")
    L = B.shape[1]
    psi = eta_to_psi(eta, n, L)
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, p)) / np.sqrt(n)
    z = (X @ B)[np.arange(n), psi - 1]
    eps = model.sample_noise(rng, n)
    y = model.q(z, eps)
    if model.variant == "linear":
        eps = y - z  # stored so that y - z reproduces it bit-for-bit
    return Dataset(X=X, y=y, model=model, seed=seed, B=B, psi=psi, eps=eps)


def _write_bin(path, a):
    np.ascontiguousarray(a, dtype="<f8").tofile(path)


def _read_bin(path, shape):
    return np.fromfile(path, dtype="<f8").reshape(shape)


def save_dataset(ds, directory):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    header = {"n": ds.n, "p": ds.p, "model": ds.model.variant,
              "noise_sd": ds.model.noise_sd, "seed": ds.seed}
    (d / "header.json").write_text(json.dumps(header, indent=2))
    _write_bin(d / "X.bin", ds.X)
    _write_bin(d / "y.bin", ds.y)
    if ds.B is not None:
        truth = {"eta": ds.eta.tolist(), "sigma": ds.model.noise_sd,
                 "L": int(ds.B.shape[1])}
        (d / "truth.json").write_text(json.dumps(truth, indent=2))
        _write_bin(d / "B.bin", ds.B)
        _write_bin(d / "eps.bin", ds.eps)
    return d


def load_dataset(directory):
    d = Path(directory)
    h = json.loads((d / "header.json").read_text())
    n, p = h["n"], h["p"]
    model = ModelKind(h["model"], h["noise_sd"])
    ds = Dataset(X=_read_bin(d / "X.bin", (n, p)), y=_read_bin(d / "y.bin", (n,)),
                 model=model, seed=h["seed"])
    if (d / "truth.json").exists():
        t = json.loads((d / "truth.json").read_text())
        ds.B = _read_bin(d / "B.bin", (p, t["L"]))
        ds.psi = eta_to_psi(t["eta"], n, t["L"])
        ds.eps = _read_bin(d / "eps.bin", (n,))
    return ds
