"""Signal, noise and change-point priors, and the posterior-mean denoiser f*.

Every signal prior is represented internally as a finite Gaussian mixture over
rows (means m_k, covariances S_k, weights w_k).  Under the channel
V = B nu + G, G ~ N(0, kappa), each component gives a Gaussian posterior, so
f* is a softmax-weighted average of linear estimators.
"""

import itertools
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.special import logsumexp

from cpamp._linalg import inv_psd, pinv_psd, sqrt_psd, sym


class _Mixture:
    """Mixture representation shared by all signal priors."""

    @cached_property
    def components(self):
        w, m, S = self._components()
        return np.asarray(w, float), np.asarray(m, float), np.asarray(S, float)

    @property
    def L(self):
        return self.components[1].shape[1]

    def second_moment(self):
        w, m, S = self.components
        return np.einsum("k,kab->ab", w, S + m[:, :, None] * m[:, None, :])

    def mean(self):
        w, m, _ = self.components
        return w @ m

    def sample(self, size, rng):
        w, m, S = self.components
        k = rng.choice(len(w), size=size, p=w)
        z = rng.standard_normal((size, self.L))
        roots = np.stack([sqrt_psd(s) for s in S])
        return m[k] + np.einsum("nb,nab->na", z, roots[k])

    @property
    def is_gaussian(self):
        w, m, _ = self.components
        return len(w) == 1 and not np.any(m)


@dataclass(frozen=True)
class GaussianRows(_Mixture):
    cov: np.ndarray

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.cov, float))
        if c.shape[0] != c.shape[1] or not np.allclose(c, c.T):
            raise ValueError("cov must be a symmetric square matrix")
        object.__setattr__(self, "cov", c)

    def _components(self):
        L = self.cov.shape[0]
        return [1.0], np.zeros((1, L)), self.cov[None]


@dataclass(frozen=True)
class BernoulliGaussian(_Mixture):
    """Rows are N(0, cov) with probability alpha and exactly zero otherwise."""

    alpha: float
    cov: np.ndarray

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        object.__setattr__(self, "cov", np.atleast_2d(np.asarray(self.cov, float)))

    def _components(self):
        L = self.cov.shape[0]
        if self.alpha == 1:
            return [1.0], np.zeros((1, L)), self.cov[None]
        return ([self.alpha, 1 - self.alpha], np.zeros((2, L)),
                np.stack([self.cov, np.zeros((L, L))]))


@dataclass(frozen=True)
class DiscreteRows(_Mixture):
    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.atoms, float)
        if a.ndim == 1:
            a = a[:, None]
        w = np.asarray(self.weights, float)
        if len(w) != len(a) or np.any(w < 0) or abs(w.sum() - 1) > 1e-12:
            raise ValueError("weights must be a probability vector matching atoms")
        object.__setattr__(self, "atoms", a)
        object.__setattr__(self, "weights", w)

    def _components(self):
        K, L = self.atoms.shape
        return self.weights, self.atoms, np.zeros((K, L, L))


@dataclass(frozen=True)
class SparseDifference(_Mixture):
    """First column N(0, kappa2); each next column jumps with probability alpha.

    A jump sets beta_l = nu * (beta_{l-1} + w_l) with w_l ~ N(0, sigma_w2) and
    nu = sqrt(kappa2 / (kappa2 + sigma_w2)).  Conditional on the jump pattern
    the row is Gaussian, giving a 2^(L-1) component mixture.
    """

    kappa2: float
    sigma_w2: float
    alpha: float
    n_signals: int

    def __post_init__(self):
        if not 0 < self.alpha <= 1 or self.kappa2 < 0 or self.sigma_w2 < 0:
            raise ValueError("invalid sparse-difference parameters")

    @property
    def rescale(self):
        return np.sqrt(self.kappa2 / (self.kappa2 + self.sigma_w2))

    def _components(self):
        L, a, nu = self.n_signals, self.alpha, self.rescale
        ws, covs = [], []
        for pattern in itertools.product((0, 1), repeat=L - 1):
            # beta = T @ (z0, w_1, ..., w_{L-1}) with standard normal inputs
            T = np.zeros((L, L))
            T[0, 0] = np.sqrt(self.kappa2)
            for l, jump in enumerate(pattern, start=1):
                T[l] = T[l - 1]
                if jump:
                    T[l] = nu * T[l]
                    T[l, l] = nu * np.sqrt(self.sigma_w2)
            k = sum(pattern)
            ws.append(a ** k * (1 - a) ** (L - 1 - k))
            covs.append(T @ T.T)
        return ws, np.zeros((len(ws), L)), np.stack(covs)


@dataclass(frozen=True)
class NoisePrior:
    """Gaussian(sigma) for linear/ReLU, uniform on [0, 1] for logistic."""

    variant: str = "gaussian"
    sigma: float = 0.0

    def __post_init__(self):
        if self.variant not in ("gaussian", "uniform"):
            raise ValueError("noise variant must be 'gaussian' or 'uniform'")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")


# ---------------------------------------------------------------- change points


@dataclass(frozen=True)
class ChangePointPrior:
    """Uniform within each count class over configurations whose segments all
    have length >= min_separation, with change points on the grid
    1 + stride * j.  count_weights[k] is the mass on k change points."""

    n: int
    L: int
    min_separation: int = 1
    count_weights: tuple = None
    grid_stride: int = 1

    def __post_init__(self):
        cw = self.count_weights
        if cw is None:
            cw = np.zeros(self.L)
            cw[-1] = 1.0
        cw = tuple(float(c) for c in cw)
        if len(cw) != self.L or min(cw) < 0 or abs(sum(cw) - 1) > 1e-9:
            raise ValueError(f"count_weights must be {self.L} probabilities")
        if self.n < 1 or self.L < 1 or self.min_separation < 1 or self.grid_stride < 1:
            raise ValueError("n, L, min_separation, grid_stride must be positive")
        if self.min_separation >= self.n and any(cw[1:]):
            raise ValueError("min_separation >= n leaves no room for change points")
        object.__setattr__(self, "count_weights", cw)

    @cached_property
    def table(self):
        """(etas padded with n+1, log prior) sorted lexicographically."""
        n, L, D, s = self.n, self.L, self.min_separation, self.grid_stride
        grid = np.arange(1 + s, n + 1, s)
        etas, logp = [], []
        for k, w in enumerate(self.count_weights):
            if w == 0:
                continue
            cands = _admissible(grid, k, n, D)
            if len(cands) == 0:
                continue
            pad = np.full((len(cands), L - 1), n + 1, dtype=np.int64)
            pad[:, :k] = cands
            etas.append(pad)
            logp.append(np.full(len(cands), np.log(w) - np.log(len(cands))))
        if not etas:
            raise ValueError("change-point prior admits no configuration")
        etas = np.concatenate(etas)
        logp = np.concatenate(logp)
        logp -= logsumexp(logp)  # classes with no admissible config drop out
        order = np.lexsort(etas.T[::-1]) if L > 1 else np.arange(len(etas))
        return etas[order], logp[order]

    @cached_property
    def marginals(self):
        """n x L matrix of marginal label probabilities (row i-1 is index i)."""
        etas, logp = self.table
        m = np.clip(_label_mass(etas, np.exp(logp), self.n, self.L), 0.0, None)
        return m / m.sum(axis=1, keepdims=True)


def _admissible(grid, k, n, D):
    if k == 0:
        return np.zeros((1, 0), dtype=np.int64)
    # grow sorted tuples one change point at a time, pruning by separation
    cur = grid[(grid - 1 >= D)][:, None]
    for _ in range(k - 1):
        nxt = []
        for c in grid:
            ok = cur[:, -1] + D <= c
            if ok.any():
                rows = cur[ok]
                nxt.append(np.column_stack([rows, np.full(len(rows), c)]))
        if not nxt:
            return np.zeros((0, k), dtype=np.int64)
        cur = np.concatenate(nxt)
    cur = cur[n + 1 - cur[:, -1] >= D]
    return cur[np.lexsort(cur.T[::-1])]


def _label_mass(etas, probs, n, L):
    """Sum of probs over configs, spread onto (row, label) cells."""
    diff = np.zeros((n + 2, L))
    starts = np.column_stack([np.ones(len(etas), np.int64), etas])
    ends = np.column_stack([etas, np.full(len(etas), n + 1, np.int64)])
    for l in range(L):
        np.add.at(diff[:, l], starts[:, l], probs)
        np.add.at(diff[:, l], ends[:, l], -probs)
    return np.cumsum(diff, axis=0)[1:n + 1]


def marginal_psi(prior, i):
    if not 1 <= i <= prior.n:
        raise ValueError(f"index {i} outside [1, {prior.n}]")
    return prior.marginals[i - 1]


def enumerate_configs(prior):
    """List of (psi, probability) over the admissible grid configurations."""
    from cpamp.model import eta_to_psi

    etas, logp = prior.table
    return [(eta_to_psi(e, prior.n, prior.L), float(np.exp(lp)))
            for e, lp in zip(etas, logp)]


@dataclass
class PriorSpec:
    signal: _Mixture
    noise: NoisePrior
    changepoint: ChangePointPrior

    @property
    def L(self):
        return self.signal.L


# -------------------------------------------------------------------- sampling


def sample_signal_matrix(prior, p, L, seed):
    if prior.L != L:
        raise ValueError(f"prior has dimension {prior.L}, expected L={L}")
    return prior.sample(p, np.random.default_rng(seed))


# ------------------------------------------------------------------------- f*


def _mixture_posterior(V, nu, kappa, prior):
    """Per-component weights, means and linear maps for V = B nu + G."""
    w, m, S = prior.components
    nuS = np.einsum("ba,kbc->kac", nu, S)             # nu^T S_k
    P = sym(np.einsum("kab,bc->kac", nuS, nu) + kappa)  # nu^T S_k nu + kappa
    A = np.einsum("kab,kbc->kac", pinv_psd(P), nuS)     # row map v -> v A_k
    c = m @ nu                                          # component channel means
    prec, logdet = inv_psd(P)
    x = V[:, None, :] - c[None]                         # (p, K, L)
    quad = np.einsum("pka,kab,pkb->pk", x, prec, x)
    with np.errstate(divide="ignore"):
        logw = np.log(w)[None] - 0.5 * (quad + logdet[None])
    logw -= logsumexp(logw, axis=1, keepdims=True)
    post = np.exp(logw)
    means = m[None] + np.einsum("pka,kab->pkb", x, A)
    return post, means, A, x, prec


def _check_inputs(V, nu, kappa, prior):
    V = np.asarray(V, float)
    single = V.ndim == 1
    V = np.atleast_2d(V)
    if np.isnan(V).any() or np.isnan(nu).any() or np.isnan(kappa).any():
        raise ValueError("NaN input to f*")
    if V.shape[1] != prior.L:
        raise ValueError("row dimension does not match prior")
    return V, single


def f_star(V, nu_B, kappa_B, prior):
    """Posterior mean E[B | B nu_B + G = V] row-wise, G ~ N(0, kappa_B)."""
    V, single = _check_inputs(V, nu_B, kappa_B, prior)
    nu_B = np.atleast_2d(nu_B)
    kappa_B = np.atleast_2d(kappa_B)
    post, means, *_ = _mixture_posterior(V, nu_B, kappa_B, prior)
    out = np.einsum("pk,pka->pa", post, means)
    return out[0] if single else out


def f_star_jacobian(V, nu_B, kappa_B, prior):
    """Jacobian d f*_a / d v_b per row; shape (L, L) or (p, L, L)."""
    V, single = _check_inputs(V, nu_B, kappa_B, prior)
    nu_B = np.atleast_2d(nu_B)
    kappa_B = np.atleast_2d(kappa_B)
    post, means, A, x, prec = _mixture_posterior(V, nu_B, kappa_B, prior)
    score = -np.einsum("pka,kab->pkb", x, prec)     # grad_v log N(v; c_k, P_k)
    sbar = np.einsum("pk,pka->pa", post, score)
    f = np.einsum("pk,pka->pa", post, means)
    J = np.einsum("pk,kba->pab", post, A)
    J += np.einsum("pk,pka,pkb->pab", post, means, score)
    J -= f[:, :, None] * sbar[:, None, :]
    return J[0] if single else J


def f_star_mean_jacobian(V, nu_B, kappa_B, prior):
    """Average Jacobian over rows (the Onsager matrix before scaling)."""
    if prior.is_gaussian:
        _, _, S = prior.components
        nuS = nu_B.T @ S[0]
        return (pinv_psd(nuS @ nu_B + kappa_B) @ nuS).T
    return f_star_jacobian(V, nu_B, kappa_B, prior).mean(axis=0)
