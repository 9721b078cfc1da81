"""Ensemble and configuration-specific ("oracle") state evolution.

Both recursions share one Monte Carlo engine.  The response side draws
Z ~ N(0, rho), V = Z rho^+ nu_Theta + G_Theta and averages over rows i by
stratifying the sample index: sample m stands for row i_m, spread evenly over
[n].  Each sample is then weighted across labels by pi_{i_m} (ensemble) or by
the indicator of the true label of row i_m (oracle).  The signal side is exact
for Gaussian priors (f* is linear) and Monte Carlo otherwise.
"""

import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import expit

from cpamp._linalg import min_eig, pinv_psd, sqrt_psd, sym
from cpamp.denoisers import ThetaChannel, g_du_linear, g_star, TOL
from cpamp.model import eta_to_psi, fractions_to_eta
from cpamp.priors import f_star
from cpamp.seeds import derive_seed

MIN_MC = 10
PSD_TOL = 1e-8


class SeError(ValueError):
    pass


@dataclass
class SeParams:
    rho: np.ndarray
    nu_theta: np.ndarray
    kappa_theta: np.ndarray
    nu_b: np.ndarray | None = None
    kappa_b: np.ndarray | None = None
    t: int = 0
    mse: float = np.nan          # predicted (1/p)||f^t(B^t) - B||^2
    mc_se: dict = field(default_factory=dict)

    @property
    def channel(self):
        return ThetaChannel(self.rho, self.nu_theta, self.kappa_theta)

    def to_dict(self):
        out = {"t": self.t, "mse": None if np.isnan(self.mse) else float(self.mse)}
        for k in ("rho", "nu_theta", "kappa_theta", "nu_b", "kappa_b"):
            v = getattr(self, k)
            out[k] = None if v is None else np.asarray(v).tolist()
        return out

    @classmethod
    def from_dict(cls, d):
        arr = lambda v: None if v is None else np.asarray(v, float)
        return cls(rho=arr(d["rho"]), nu_theta=arr(d["nu_theta"]),
                   kappa_theta=arr(d["kappa_theta"]), nu_b=arr(d["nu_b"]),
                   kappa_b=arr(d["kappa_b"]), t=d["t"],
                   mse=np.nan if d.get("mse") is None else d["mse"])


@dataclass
class SeTrajectory:
    params: list
    mc_samples: int
    seed: int
    mode: str = "ensemble"

    def __getitem__(self, t):
        return self.params[t]

    def __len__(self):
        return len(self.params)

    def to_json(self):
        return json.dumps({"mode": self.mode, "mc_samples": self.mc_samples,
                           "seed": self.seed,
                           "iterations": [p.to_dict() for p in self.params]})

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        return cls([SeParams.from_dict(x) for x in d["iterations"]],
                   d["mc_samples"], d["seed"], d.get("mode", "ensemble"))


# ------------------------------------------------------------------ init


def se_init(prior, delta, mc_samples=1000, seed=0, B=None, b_hat0=None):
    """t = 0 parameters.  With B (and optionally the drawn B-hat^0) given,
    the finite-p moments replace the prior's."""
    if delta <= 0:
        raise SeError("delta must be positive")
    sig = prior.signal
    if B is None:
        m2 = sig.second_moment()
        mean = sig.mean()
        rho = m2 / delta
        mse = 2 * (np.trace(m2) - mean @ mean)
        nu0 = np.zeros_like(rho)
        kap0 = rho.copy()
    else:
        p = B.shape[0]
        rho = sym(B.T @ B) / (p * delta)
        m2 = sig.second_moment()
        if b_hat0 is None:
            nu0, kap0 = np.zeros_like(rho), m2 / delta
            mse = np.trace(B.T @ B) / p + np.trace(m2) - 2 * sig.mean() @ B.mean(0)
        else:
            nu0 = B.T @ b_hat0 / (p * delta)
            kap0 = sym(b_hat0.T @ b_hat0) / (p * delta)
            mse = np.sum((b_hat0 - B) ** 2) / p
    return SeParams(rho=rho, nu_theta=nu0, kappa_theta=kap0, t=0, mse=float(mse))


# ------------------------------------------------------------ response side


def _row_labels(prior, n_samples, truth_psi=None):
    """Stratified rows i_m and their denoiser marginals / label weights."""
    n = prior.changepoint.n
    rows = ((np.arange(n_samples) + 0.5) * n / n_samples).astype(np.int64)
    pi = prior.changepoint.marginals[rows]
    if truth_psi is None:
        return rows, pi, pi
    lab = np.asarray(truth_psi)[..., rows] - 1
    W = np.zeros(lab.shape + (prior.L,))
    np.put_along_axis(W, lab[..., None], 1.0, axis=-1)
    return rows, pi, W


def _logistic_link(z):
    """Success probability and its derivative for the logistic response."""
    p = expit(z)
    return p, p * (1 - p)


def _response_terms(variant, sigma, z, eps, V, pi, channel):
    """Per-sample g g^T and the d g / d z_l factor for one label.

    Logistic responses are integrated out exactly over eps (two outcomes).
    """
    if variant == "logistic":
        prob, dprob = _logistic_link(z)
        g1 = g_star("logistic", V, np.ones(z.shape), pi, channel)
        g0 = g_star("logistic", V, np.zeros(z.shape), pi, channel)
        gg = (prob[..., None, None] * g1[..., :, None] * g1[..., None, :]
              + (1 - prob)[..., None, None] * g0[..., :, None] * g0[..., None, :])
        dz = dprob[..., None] * (g1 - g0)
        return gg, dz
    if variant == "linear":
        u = z + eps
        g = g_star("linear", V, u, pi, channel, sigma)
        dz = g_du_linear(V, u, pi, channel, sigma)
    else:
        u = np.maximum(z, 0.0) + eps
        g = g_star("relu", V, u, pi, channel, sigma)
        h = TOL.fd_step * (1 + np.abs(u))[..., None]
        gp = g_star("relu", V, u + h[..., 0], pi, channel, sigma)
        gm = g_star("relu", V, u - h[..., 0], pi, channel, sigma)
        dz = (z > 0)[..., None] * (gp - gm) / (2 * h)
    return g[..., :, None] * g[..., None, :], dz


def _response_side(model, sample, channel, pi, W, rng, mc):
    """Monte Carlo nu_B, kappa_B for channel-law `sample` and denoiser `channel`.

    `sample` may carry a leading batch axis on nu_theta / kappa_theta; W then
    has shape (batch, mc, L).  Returns means and per-sample contributions.
    """
    L = sample.rho.shape[0]
    Z = rng.standard_normal((mc, L)) @ sqrt_psd(sample.rho)
    Gs = rng.standard_normal((mc, L))
    eps = model.sample_noise(rng, (mc,))
    proj = pinv_psd(sample.rho) @ sample.nu_theta       # (..., L, L)
    V = Z @ proj + Gs @ sqrt_psd(sample.kappa_theta)     # (..., mc, L)
    batch = V.shape[:-2]
    kk = np.zeros(batch + (mc, L, L))
    nb = np.zeros(batch + (mc, L, L))
    for l in range(L):
        w = W[..., l]
        if not np.any(w):
            continue
        gg, dz = _response_terms(model.variant, model.noise_sd, Z[:, l], eps, V, pi, channel)
        kk += w[..., None, None] * gg
        nb[..., l, :] += w[..., None] * dz   # nu_B row l: d g / d z_l
    return kk, nb


def _mean_se(x, axis=-3):
    m = x.mean(axis=axis)
    se = x.std(axis=axis, ddof=1) / np.sqrt(x.shape[axis])
    return m, se


# -------------------------------------------------------------- signal side


def _signal_side(prior, delta, rho, nu_b, kappa_b, nu_den, kappa_den, rng, mc,
                 B=None, analytic=True):
    """nu_Theta, kappa_Theta and MSE for V_B = B nu_b + N(0, kappa_b) passed
    through f* parametrized by (nu_den, kappa_den)."""
    sig = prior.signal
    rinv = pinv_psd(rho)
    if analytic and sig.is_gaussian:
        S = sig.components[2][0]
        m2 = sig.second_moment() if B is None else B.T @ B / B.shape[0]
        nuS = np.swapaxes(nu_den, -1, -2) @ S
        A = pinv_psd(sym(nuS @ nu_den + kappa_den)) @ nuS     # f(v) = v A
        nuA = nu_b @ A
        nu_t = m2 @ nuA / delta
        D = nuA - rinv @ nu_t
        At = np.swapaxes(A, -1, -2)
        noise = At @ kappa_b @ A
        kap_t = (np.swapaxes(D, -1, -2) @ m2 @ D + noise) / delta
        E = nuA - np.eye(rho.shape[-1])
        mse = np.trace(np.swapaxes(E, -1, -2) @ m2 @ E + noise, axis1=-2, axis2=-1)
        return nu_t, sym(kap_t), mse, {}
    if np.ndim(nu_b) > 2:
        outs = [_signal_side(prior, delta, rho, nb, kb, nd, kd, rng, mc, B, analytic)
                for nb, kb, nd, kd in zip(nu_b, kappa_b,
                                          np.broadcast_to(nu_den, nu_b.shape),
                                          np.broadcast_to(kappa_den, kappa_b.shape))]
        return (np.stack([o[0] for o in outs]), np.stack([o[1] for o in outs]),
                np.array([o[2] for o in outs]), {})
    if B is None:
        b = sig.sample(mc, rng)
    else:
        b = np.tile(B, (int(np.ceil(mc / B.shape[0])), 1))
    G = rng.standard_normal(b.shape) @ sqrt_psd(kappa_b)
    f = f_star(b @ nu_b + G, nu_den, kappa_den, sig)
    bf = b[:, :, None] * f[:, None, :]
    nu_t, nu_se = _mean_se(bf)
    nu_t, nu_se = nu_t / delta, nu_se / delta
    c = f - b @ rinv @ nu_t
    kap_t, kap_se = _mean_se(c[:, :, None] * c[:, None, :])
    mse = float(np.mean(np.sum((f - b) ** 2, axis=1)))
    return nu_t, sym(kap_t) / delta, mse, {"nu_theta": nu_se, "kappa_theta": kap_se / delta}


def _check_psd(k, name, t):
    for mat in np.reshape(k, (-1,) + k.shape[-2:]):
        tr = max(np.trace(mat), 1e-300)
        if min_eig(mat) < -PSD_TOL * tr:
            raise SeError(f"{name} lost positive semidefiniteness at t={t}")


# ---------------------------------------------------------------- steps


def _step(params, prior, model, delta, mc_samples, seed, truth_psi=None,
          denoiser=None, B=None, analytic=True):
    if mc_samples < MIN_MC:
        raise SeError(f"mc_samples must be >= {MIN_MC}")
    rng = np.random.default_rng(seed)
    g_params = params if denoiser is None else denoiser[0]
    _, pi, W = _row_labels(prior, mc_samples, truth_psi)
    kk, nb = _response_side(model, params, g_params.channel, pi, W, rng, mc_samples)
    kappa_b, kb_se = _mean_se(kk)
    nu_b, nb_se = _mean_se(nb)
    kappa_b = sym(kappa_b)
    _check_psd(kappa_b, "kappa_B", params.t + 1)
    if denoiser is None:
        nu_den, kappa_den = nu_b, kappa_b
    else:
        nu_den, kappa_den = denoiser[1].nu_b, denoiser[1].kappa_b
    nu_t, kap_t, mse, f_se = _signal_side(prior, delta, params.rho, nu_b, kappa_b,
                                          nu_den, kappa_den, rng, mc_samples, B, analytic)
    _check_psd(kap_t, "kappa_Theta", params.t + 1)
    return SeParams(rho=params.rho, nu_theta=nu_t, kappa_theta=kap_t, nu_b=nu_b,
                    kappa_b=kappa_b, t=params.t + 1, mse=mse,
                    mc_se={"nu_b": nb_se, "kappa_b": kb_se, **f_se})


def ensemble_se_step(params, prior, model, delta, mc_samples=1000, seed=0, analytic=True):
    """One step of the prior-averaged recursion; denoisers are self-parametrized."""
    return _step(params, prior, model, delta, mc_samples, seed, analytic=analytic)


def truth_labels(fractions, n, L):
    f = [a for a in np.atleast_1d(fractions)]
    if len(f) >= 2 and f[0] == 0 and f[-1] == 1:
        f = f[1:-1]
    return eta_to_psi(fractions_to_eta(f, n), n, L)


def oracle_se_step(params, truth_psi_fractions, prior, model, delta, mc_samples=1000,
                   seed=0, denoiser=None, B=None, analytic=True):
    """One step of the configuration-specific recursion.

    `denoiser` = (ensemble params at t, ensemble params at t+1) fixes the
    g*/f* parametrization used by AMP; without it the step parametrizes the
    denoisers by its own matrices.  `B` switches the signal-side moments from
    the prior to a realized signal matrix.
    """
    psi = truth_labels(truth_psi_fractions, prior.changepoint.n, prior.L)
    return _step(params, prior, model, delta, mc_samples, seed, truth_psi=psi,
                 denoiser=denoiser, B=B, analytic=analytic)


def ensemble_se(prior, model, delta, T, mc_samples=1000, seed=0, analytic=True):
    traj = [se_init(prior, delta, mc_samples, seed)]
    for t in range(T):
        traj.append(ensemble_se_step(traj[-1], prior, model, delta, mc_samples,
                                     derive_seed(seed, t), analytic))
    return SeTrajectory(traj, mc_samples, seed, "ensemble")


def oracle_se(prior, model, delta, T, fractions, ensemble=None, mc_samples=1000,
              seed=0, B=None, b_hat0=None, analytic=True):
    """Oracle trajectory; with `ensemble` the denoisers follow that trajectory."""
    traj = [se_init(prior, delta, mc_samples, seed, B=B, b_hat0=b_hat0)]
    for t in range(T):
        den = None if ensemble is None else (ensemble[t], ensemble[t + 1])
        traj.append(oracle_se_step(traj[-1], fractions, prior, model, delta, mc_samples,
                                   derive_seed(seed, t), den, B, analytic))
    return SeTrajectory(traj, mc_samples, seed, "oracle")


def oracle_se_batch(prior, model, delta, T, psis, ensemble, mc_samples=1000, seed=0):
    """Oracle trajectories for many candidate configurations at once.

    psis: (C, n) label vectors.  Returns (nu_theta, kappa_theta) stacks of
    shape (T+1, C, L, L).  Common random numbers are shared across candidates.
    """
    psis = np.atleast_2d(psis)
    C = len(psis)
    p0 = se_init(prior, delta, mc_samples, seed)
    rho = p0.rho
    nu = np.broadcast_to(p0.nu_theta, (C,) + rho.shape).copy()
    kap = np.broadcast_to(p0.kappa_theta, (C,) + rho.shape).copy()
    nus, kaps = [nu], [kap]
    _, pi, W = _row_labels(prior, mc_samples, psis)
    for t in range(T):
        rng = np.random.default_rng(derive_seed(seed, t))
        cur = SeParams(rho=rho, nu_theta=nu, kappa_theta=kap, t=t)
        kk, nb = _response_side(model, cur, ensemble[t].channel, pi, W, rng, mc_samples)
        kappa_b = sym(kk.mean(axis=-3))
        nu_b = nb.mean(axis=-3)
        nu, kap, _, _ = _signal_side(prior, delta, rho, nu_b, kappa_b,
                                     ensemble[t + 1].nu_b, ensemble[t + 1].kappa_b,
                                     rng, mc_samples)
        nus.append(nu)
        kaps.append(kap)
    return np.stack(nus), np.stack(kaps)


# ---------------------------------------------------------- limit samples


def sample_limit_iterates(params, B, psi, model, n, seed):
    """Draw (V_Theta, Z, V_B) from the effective channels, and a fresh
    response u = q(Z[i, psi_i], eps') with independent noise.

    Returns (V_theta, Z, V_B, u); V_B is None at t = 0.
    """
    rng = np.random.default_rng(seed)
    L = params.rho.shape[0]
    Z = rng.standard_normal((n, L)) @ sqrt_psd(params.rho)
    G = rng.standard_normal((n, L)) @ sqrt_psd(params.kappa_theta)
    V = Z @ pinv_psd(params.rho) @ params.nu_theta + G
    VB = None
    if params.nu_b is not None and B is not None:
        VB = B @ params.nu_b + rng.standard_normal(B.shape) @ sqrt_psd(params.kappa_b)
    psi = np.asarray(psi)
    eps = model.sample_noise(rng, n)
    u = model.q(Z[np.arange(n), psi - 1], eps)
    return V, Z, VB, u


def remark_deviations(params, prior, model, delta, mc_samples=5000, seed=0, groups=50):
    """Deviations from the f = f* and g = g* identities after one ensemble step.

    Returns ((D1, se1), (D2, se2)):
      D2 = nu_B - kappa_B, a mean of per-sample terms, with its plain MC
           standard error;
      D1 = kappa_Theta - (nu_Theta - nu_Theta^T rho^+ nu_Theta) from Monte
           Carlo signal-side draws on the channel just computed, with a
           delete-one-group jackknife standard error.
    """
    rng = np.random.default_rng(seed)
    _, pi, W = _row_labels(prior, mc_samples)
    kk, nb = _response_side(model, params, params.channel, pi, W, rng, mc_samples)
    d2, se2 = _mean_se(nb - kk)
    nu_b, kappa_b = nb.mean(0), sym(kk.mean(0))

    sig = prior.signal
    b = sig.sample(mc_samples, rng)
    f = f_star(b @ nu_b + rng.standard_normal(b.shape) @ sqrt_psd(kappa_b),
               nu_b, kappa_b, sig)
    rinv = pinv_psd(params.rho)
    outer = lambda x, y: x[:, :, None] * y[:, None, :]
    parts = np.stack([outer(f, f), outer(b, f), outer(b, b)], axis=1)  # (M, 3, L, L)

    def stat(m):
        m_ff, m_bf, m_bb = m
        nu = m_bf / delta
        A = rinv @ nu
        kap = (m_ff - A.T @ m_bf - m_bf.T @ A + A.T @ m_bb @ A) / delta
        return kap - (nu - nu.T @ rinv @ nu)

    d1 = stat(parts.mean(0))
    chunks = np.array_split(np.arange(mc_samples), groups)
    total = parts.sum(0)
    loo = np.array([stat((total - parts[c].sum(0)) / (mc_samples - len(c))) for c in chunks])
    se1 = np.sqrt((groups - 1) / groups * ((loo - loo.mean(0)) ** 2).sum(0))
    return (d1, se1), (d2, se2)
