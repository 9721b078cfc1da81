"""Response-side denoiser g* for the linear, logistic and ReLU models.

Given a row V of the effective channel V = Z rho^{-1} nu + G and the response
u, g* = cov(Z|V)^+ (E[Z|V,u] - E[Z|V]).  Conditional on the label l, the
posterior shift of Z is always along the column cov(Z|V)[:, l]:

    E[Z | V, u, l] = mu + C[:, l] * shift_l(V, u),

so each model only has to supply the per-label log-likelihood of u given V and
the scalar shift_l.  The mixture over labels uses the marginals pi_i.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import log_ndtr, logsumexp, ndtr

from cpamp._linalg import inv_psd, mvn_logpdf, pinv_psd, sym

GAMMA = np.sqrt(np.pi / 8)   # probit scale: logistic'(z) ~ Phi(GAMMA z)
VAR_FLOOR = 1e-12
LOG_SQRT_2PI = 0.5 * np.log(2 * np.pi)


@dataclass(frozen=True)
class Tolerances:
    fd_step: float = 1e-5
    var_floor: float = VAR_FLOOR
    eig_floor: float = 1e-12


TOL = Tolerances()


@dataclass(frozen=True, eq=False)
class ThetaChannel:
    """Law of (Z, V): Z ~ N(0, rho), V = Z rho^{-1} nu_theta + N(0, kappa_theta)."""

    rho: np.ndarray
    nu_theta: np.ndarray
    kappa_theta: np.ndarray

    @cached_property
    def sigma_V(self):
        return sym(self.nu_theta.T @ pinv_psd(self.rho) @ self.nu_theta + self.kappa_theta)

    @cached_property
    def M(self):
        """E[Z | V] = V @ M."""
        return pinv_psd(self.sigma_V) @ self.nu_theta.T

    @cached_property
    def cond_cov(self):
        c = sym(self.rho - self.nu_theta @ self.M)
        w, v = np.linalg.eigh(c)
        return (v * np.clip(w, 0, None)) @ v.T

    @cached_property
    def cond_var(self):
        return np.maximum(np.diag(self.cond_cov), VAR_FLOOR)

    @cached_property
    def score_map(self):
        """C C^+ : maps label-space coefficients to g*."""
        C = self.cond_cov
        return C @ pinv_psd(C)

    @cached_property
    def condition_number(self):
        w = np.linalg.eigvalsh(self.cond_cov)
        return float(w.max() / max(w.min(), 1e-300))

    @property
    def L(self):
        return self.rho.shape[0]


# --------------------------------------------------------------- Gaussian bits


@dataclass
class ConditionalMoments:
    mean: np.ndarray
    cov: np.ndarray


def gaussian_condition(joint_mean, joint_cov, observed, value):
    """Moments of the unobserved block given the block `observed` = value."""
    joint_mean = np.asarray(joint_mean, float)
    joint_cov = np.asarray(joint_cov, float)
    d = len(joint_mean)
    if joint_cov.shape != (d, d):
        raise ValueError("joint_cov does not match joint_mean")
    obs = np.asarray(observed, int)
    free = np.setdiff1d(np.arange(d), obs)
    Syy = joint_cov[np.ix_(obs, obs)]
    Sxy = joint_cov[np.ix_(free, obs)]
    K = Sxy @ pinv_psd(Syy)
    mean = joint_mean[free] + K @ (np.asarray(value, float) - joint_mean[obs])
    cov = joint_cov[np.ix_(free, free)] - K @ Sxy.T
    return ConditionalMoments(mean, sym(cov))


def _norm_logpdf(x):
    return -0.5 * x * x - LOG_SQRT_2PI


def _mills(x):
    """phi(x) / Phi(x), stable in both tails."""
    return np.exp(_norm_logpdf(x) - log_ndtr(x))


def truncated_mean_upper(mu, s):
    """E[X | X >= 0] for X ~ N(mu, s^2)."""
    return mu + s * _mills(mu / s)


def truncated_mean_lower(mu, s):
    """E[X | X < 0] for X ~ N(mu, s^2)."""
    return mu - s * _mills(-mu / s)


# ------------------------------------------------------- per-label ingredients


def relu_branches(mu, u, var, sigma):
    """Log-likelihoods and shifts of the Z_l < 0 and Z_l >= 0 branches."""
    if sigma <= 0:
        raise ValueError("ReLU denoiser needs sigma > 0")
    sd = np.sqrt(var)
    # branch Z_l < 0: u is pure noise
    log0 = log_ndtr(-mu / sd) + _norm_logpdf(u / sigma) - np.log(sigma)
    shift0 = (truncated_mean_lower(mu, sd) - mu) / var
    # branch Z_l >= 0: u = Z_l + noise
    tot = var + sigma ** 2
    mu_s = (u * var + mu * sigma ** 2) / tot
    sd_s = np.sqrt(var * sigma ** 2 / tot)
    log1 = _norm_logpdf((u - mu) / np.sqrt(tot)) - 0.5 * np.log(tot) + log_ndtr(mu_s / sd_s)
    shift1 = (truncated_mean_upper(mu_s, sd_s) - mu) / var
    return log0, shift0, log1, shift1


def _label_terms(variant, mu, u, ch, sigma):
    """Per-label log p(u | V, l) and shift_l; both shaped like mu (..., L)."""
    var = ch.cond_var
    u = u[..., None]
    if variant == "linear":
        s = var + sigma ** 2
        r = u - mu
        return -0.5 * r * r / s - 0.5 * np.log(2 * np.pi * s), r / s
    if variant == "logistic":
        tau = GAMMA / np.sqrt(1 + GAMMA ** 2 * var)
        sgn = 2 * u - 1
        x = sgn * tau * mu
        return log_ndtr(x), sgn * tau * _mills(x)
    if variant == "relu":
        log0, shift0, log1, shift1 = relu_branches(mu, u, var, sigma)
        logl = np.logaddexp(log0, log1)
        w1 = np.exp(log1 - logl)
        return logl, (1 - w1) * shift0 + w1 * shift1
    raise ValueError(f"unknown model {variant!r}")


def _as_batch(V, u, pi, L):
    V = np.asarray(V, float)
    single = V.ndim == 1
    V = np.atleast_2d(V)
    u = np.broadcast_to(np.asarray(u, float), V.shape[:-1])
    pi = np.broadcast_to(np.asarray(pi, float), V.shape)
    if V.shape[-1] != L:
        raise ValueError("row dimension does not match channel")
    return V, u, pi, single


def _mixture(variant, V, u, pi, ch, sigma):
    mu = V @ ch.M
    logl, shift = _label_terms(variant, mu, u, ch, sigma)
    with np.errstate(divide="ignore"):
        logw = np.log(pi) + logl
    norm = logsumexp(logw, axis=-1, keepdims=True)
    bad = ~np.isfinite(norm[..., 0])
    w = np.exp(logw - np.where(np.isfinite(norm), norm, 0.0))
    w[bad] = 0.0
    return mu, logl, shift, w, bad


def g_star(variant, V, u, pi, channel, sigma=0.0, return_flags=False):
    """Batch g*: V (..., L), u (...), pi (..., L) marginal label weights.

    Rows whose mixture likelihood underflows entirely return zero; pass
    return_flags=True to get the boolean mask of such rows.
    """
    V, u, pi, single = _as_batch(V, u, pi, channel.L)
    _, _, shift, w, bad = _mixture(variant, V, u, pi, channel, sigma)
    g = (w * shift) @ channel.score_map
    g = np.where(np.isfinite(g), g, 0.0)
    out = g[0] if single else g
    return (out, bad) if return_flags else out


def g_star_linear(V, u, pi, channel, sigma):
    return g_star("linear", V, u, pi, channel, sigma)


def g_star_logistic(V, u, pi, channel):
    return g_star("logistic", V, u, pi, channel)


def g_star_relu(V, u, pi, channel, sigma):
    if sigma <= 0:
        raise ValueError("ReLU denoiser needs sigma > 0")
    return g_star("relu", V, u, pi, channel, sigma)


def _fd_steps(V):
    return TOL.fd_step * (1 + np.linalg.norm(V, axis=-1))


def g_jacobian_fd(variant, V, u, pi, channel, sigma=0.0, h_scale=1.0):
    """Central-difference Jacobian d g_a / d V_b, shape (..., L, L)."""
    V, u, pi, single = _as_batch(V, u, pi, channel.L)
    h = h_scale * _fd_steps(V)[..., None]
    cols = []
    for b in range(channel.L):
        e = np.zeros(channel.L)
        e[b] = 1.0
        gp = g_star(variant, V + h * e, u, pi, channel, sigma)
        gm = g_star(variant, V - h * e, u, pi, channel, sigma)
        cols.append((gp - gm) / (2 * h))
    J = np.stack(cols, axis=-1)
    return J[0] if single else J


def _linear_parts(V, u, pi, ch, sigma):
    mu, _, r, w, _ = _mixture("linear", V, u, pi, ch, sigma)
    s = ch.cond_var + sigma ** 2
    return r, w, s


def g_jacobian_linear(V, u, pi, channel, sigma):
    """Analytic Jacobian of the linear-model g* with respect to V."""
    V, u, pi, single = _as_batch(V, u, pi, channel.L)
    r, w, s = _linear_parts(V, u, pi, channel, sigma)
    D = channel.M.T                                  # d mu_l / d V
    wr = w * r
    dlog = r[..., :, None] * D                       # d log p_l / d V
    dw = w[..., :, None] * (dlog - np.einsum("...k,kb->...b", wr, D)[..., None, :])
    da = r[..., :, None] * dw - (w / s)[..., :, None] * D
    J = np.einsum("lc,...lb->...cb", channel.score_map, da)
    return J[0] if single else J


def g_du_linear(V, u, pi, channel, sigma):
    """Analytic derivative of the linear-model g* with respect to u."""
    V, u, pi, single = _as_batch(V, u, pi, channel.L)
    r, w, s = _linear_parts(V, u, pi, channel, sigma)
    dw = w * (-r + (w * r).sum(-1, keepdims=True))
    da = r * dw + w / s
    out = da @ channel.score_map
    return out[0] if single else out


def g_jacobian(variant, V, u, pi, channel, sigma=0.0):
    if variant == "linear":
        return g_jacobian_linear(V, u, pi, channel, sigma)
    return g_jacobian_fd(variant, V, u, pi, channel, sigma)


def g_mean_jacobian(variant, V, u, pi, channel, sigma=0.0):
    """(1/n) sum_i d g_i / d Theta_i, the matrix C^t of the iteration."""
    return g_jacobian(variant, V, u, pi, channel, sigma).mean(axis=0)


# ------------------------------------------------------------- likelihoods


def row_loglik(variant, V, u, channel, sigma=0.0):
    """log density of (V_i, u_i) under each label; shape (n, L)."""
    V = np.atleast_2d(np.asarray(V, float))
    u = np.asarray(u, float)
    mu = V @ channel.M
    logl, _ = _label_terms(variant, mu, u, channel, sigma)
    return logl + mvn_logpdf(V, channel.sigma_V)[..., None]
