"""Likelihoods, posteriors over change-point configurations, point estimates
and the Hausdorff distance."""

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from cpamp.denoisers import ThetaChannel, row_loglik
from cpamp.model import eta_to_psi, fractions_to_eta, psi_to_eta
from cpamp.state_evolution import ensemble_se, oracle_se_batch

METHODS = ("l2_match", "posterior_argmax", "greedy")


# ------------------------------------------------------------ segment sums


def _segment_sums(cost, etas):
    """sum_i cost[i, psi_i - 1] for each padded eta row; cost is (n, L)."""
    n, L = cost.shape
    cs = np.vstack([np.zeros(L), np.cumsum(cost, axis=0)])
    etas = np.asarray(etas, dtype=np.int64)
    if etas.ndim == 1:
        etas = etas[None]
    starts = np.column_stack([np.ones(len(etas), np.int64), etas]) - 1
    ends = np.column_stack([etas, np.full(len(etas), n + 1, np.int64)]) - 1
    lab = np.arange(L)
    return (cs[ends, lab] - cs[starts, lab]).sum(axis=1)


def _unpad(eta, n):
    eta = np.asarray(eta)
    return np.unique(eta[eta <= n])


# -------------------------------------------------------------- likelihoods


def likelihood_bar(theta, y, psi, se_bar, model):
    """log Lbar: per-row densities under the psi-independent ensemble channel."""
    theta = np.atleast_2d(theta)
    psi = np.asarray(psi)
    if theta.shape[0] != len(y) or len(psi) != len(y):
        raise ValueError("theta, y and psi must have matching row counts")
    ll = row_loglik(model.variant, theta, y, se_bar.channel, model.noise_sd)
    return float(ll[np.arange(len(y)), psi - 1].sum())


def _fraction_key(eta, n):
    return tuple(round((e - 1) / n, 3) for e in _unpad(eta, n))


class ExactLikelihood:
    """psi-specific SE parameters at iteration t, memoized per fraction tuple.

    Each candidate's trajectory uses the AMP denoisers (the ensemble
    trajectory) with the candidate playing the truth.
    """

    def __init__(self, prior, model, delta, t, ensemble=None, mc_samples=1000, seed=0):
        self.prior, self.model, self.delta, self.t = prior, model, delta, t
        self.mc_samples, self.seed = mc_samples, seed
        self.ensemble = ensemble or ensemble_se(prior, model, delta, t, mc_samples, seed)
        self.cache = {}
        self.n_computed = 0

    def _psi(self, key):
        n, L = self.prior.changepoint.n, self.prior.L
        return eta_to_psi(fractions_to_eta(key, n), n, L)

    def params(self, etas):
        n = self.prior.changepoint.n
        keys = [_fraction_key(e, n) for e in np.atleast_2d(etas)]
        missing = sorted(set(k for k in keys if k not in self.cache))
        for lo in range(0, len(missing), 256):
            chunk = missing[lo: lo + 256]
            nus, kaps = oracle_se_batch(self.prior, self.model, self.delta, self.t,
                                        np.stack([self._psi(k) for k in chunk]),
                                        self.ensemble, self.mc_samples, self.seed)
            for j, k in enumerate(chunk):
                self.cache[k] = (nus[self.t, j], kaps[self.t, j])
            self.n_computed += len(chunk)
        return [self.cache[k] for k in keys]

    def loglik(self, theta, y, etas):
        n, L = self.prior.changepoint.n, self.prior.L
        rho = self.ensemble[0].rho
        out = []
        for eta, (nu, kap) in zip(np.atleast_2d(etas), self.params(etas)):
            ch = ThetaChannel(rho, nu, kap)
            ll = row_loglik(self.model.variant, theta, y, ch, self.model.noise_sd)
            out.append(_segment_sums(ll, eta[None])[0])
        return np.array(out)


def likelihood_exact(theta, y, psi, prior, model, delta, t, mc_samples=1000, seed=0,
                     cache=None):
    """log L: per-row densities under the SE run with psi as the truth."""
    cache = cache or ExactLikelihood(prior, model, delta, t, None, mc_samples, seed)
    L = prior.L
    eta = np.full(L - 1, len(y) + 1)
    e = psi_to_eta(psi)
    eta[: len(e)] = e
    return float(cache.loglik(theta, y, eta[None])[0])


# ---------------------------------------------------------------- posterior


@dataclass
class PosteriorTable:
    etas: np.ndarray        # (C, L-1), padded with n+1
    log_probs: np.ndarray
    kind: str
    n: int

    @property
    def probs(self):
        return np.exp(self.log_probs)

    @property
    def counts(self):
        return (self.etas <= self.n).sum(axis=1)

    def count_marginal(self, L):
        return np.bincount(self.counts, weights=self.probs, minlength=L)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        k = self.etas.shape[1]
        w.writerow([f"eta_{j + 1}" for j in range(k)] + ["count", "log_prob", "prob"])
        for eta, c, lp in zip(self.etas, self.counts, self.log_probs):
            w.writerow([int(e) if e <= self.n else "" for e in eta]
                       + [int(c), repr(float(lp)), repr(float(np.exp(lp)))])
        return buf.getvalue()


def _approx_loglik(theta, y, se, model):
    return row_loglik(model.variant, theta, y, se.channel, model.noise_sd)


def posterior_over_configs(theta, y, cp_prior, se, model, kind="approximate", exact=None):
    """Normalized posterior over enumerated configurations.

    kind='approximate' uses the ensemble channel `se`; kind='exact' needs an
    ExactLikelihood in `exact`.
    """
    etas, logp = cp_prior.table
    if len(etas) == 0:
        raise ValueError("empty candidate set")
    if kind == "approximate":
        ll = _segment_sums(_approx_loglik(theta, y, se, model), etas)
    elif kind == "exact":
        if exact is None:
            raise ValueError("exact posterior needs an ExactLikelihood")
        ll = exact.loglik(theta, y, etas)
    else:
        raise ValueError(f"unknown posterior kind {kind!r}")
    lp = logp + ll
    return PosteriorTable(etas=etas, log_probs=lp - logsumexp(lp), kind=kind, n=cp_prior.n)


# ---------------------------------------------------------- point estimates


@dataclass
class ChangePointEstimate:
    eta_hat: np.ndarray
    count: int
    method: str


def _greedy(cost, cp_prior):
    """Best-first search maximizing -cost-sum plus the log prior.

    One change point is added per round (best single addition given the
    current set), followed by coordinate refinement of the existing points.
    The best set over all rounds with positive prior mass is returned.
    """
    n, L = cp_prior.n, cp_prior.L
    D, s = cp_prior.min_separation, cp_prior.grid_stride
    grid = np.arange(1 + s, n + 1, s)
    etas, logp = cp_prior.table
    counts = (etas <= n).sum(axis=1)
    class_logp = {int(k): logp[counts == k][0] for k in np.unique(counts)}

    def ok(S):
        b = np.concatenate([[1], S, [n + 1]])
        return np.all(np.diff(b) >= D)

    def score(S):
        pad = np.full(L - 1, n + 1)
        pad[: len(S)] = S
        return -_segment_sums(cost, pad[None])[0]

    def best_insert(S):
        best, best_val = None, -np.inf
        for c in grid:
            if c in S:
                continue
            T = np.sort(np.append(S, c))
            if ok(T):
                v = score(T)
                if v > best_val:
                    best, best_val = T, v
        return best, best_val

    S = np.array([], dtype=np.int64)
    found = {0: (S, score(S))}
    for k in range(1, L):
        T, val = best_insert(S)
        if T is None:
            break
        for _ in range(5):
            changed = False
            for j in range(len(T)):
                R, rv = best_insert(np.delete(T, j))
                if R is not None and rv > val and not np.array_equal(R, T):
                    T, val, changed = R, rv, True
            if not changed:
                break
        S = T
        found[k] = (S, val)
    best, best_val = None, -np.inf
    for k, (S, val) in sorted(found.items()):
        if k in class_logp and val + class_logp[k] > best_val:
            best, best_val = S, val + class_logp[k]
    return best


def point_estimate(theta, y, cp_prior, se, model, method="posterior_argmax"):
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    n = cp_prior.n
    if method == "l2_match":
        if model.variant != "linear":
            raise ValueError("l2_match is defined for the linear model only")
        cost = (np.asarray(y)[:, None] - theta) ** 2
        etas, _ = cp_prior.table
        eta = etas[np.argmin(_segment_sums(cost, etas))]
    elif method == "posterior_argmax":
        table = posterior_over_configs(theta, y, cp_prior, se, model)
        eta = table.etas[np.argmax(table.log_probs)]
    else:
        eta = _greedy(-_approx_loglik(theta, y, se, model), cp_prior)
    eta = _unpad(eta, n)
    return ChangePointEstimate(eta_hat=eta, count=len(eta), method=method)


# ---------------------------------------------------------------- Hausdorff


def hausdorff(eta_a, eta_b, n=None):
    """max over both directions of nearest-point distances.

    Both empty gives 0.  Exactly one empty gives n (the maximal penalty),
    which therefore needs n.
    """
    a = np.unique(np.asarray(eta_a, float).ravel())
    b = np.unique(np.asarray(eta_b, float).ravel())
    if a.size == 0 and b.size == 0:
        return 0.0
    if a.size == 0 or b.size == 0:
        if n is None:
            raise ValueError("one empty set: pass n for the max-penalty convention")
        return float(n)
    d = np.abs(a[:, None] - b[None, :])
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


def hausdorff_report(eta_true, eta_hat, n):
    raw = hausdorff(eta_true, eta_hat, n)
    flagged = (len(eta_true) == 0) != (len(eta_hat) == 0)
    return {"raw": raw, "normalized": raw / n, "empty_flag": bool(flagged)}
