"""AMP iteration with matrix iterates and Onsager corrections.

    Theta^t   = X Bhat^t - Rhat^{t-1} (F^t)^T,      Rhat^{-1} = 0
    Rhat^t    = g*^t(Theta^t, y)
    B^{t+1}   = X^T Rhat^t - Bhat^t (C^t)^T
    Bhat^{t+1} = f*^{t+1}(B^{t+1})

C^t averages the Jacobians of g over the n rows, F^t sums those of f over the
p rows and divides by n.  Denoisers are parametrized by the ensemble SE.
"""

import json
import time
from dataclasses import dataclass, field

import numpy as np

from cpamp.denoisers import g_mean_jacobian, g_star
from cpamp.priors import f_star, f_star_mean_jacobian
from cpamp.seeds import derive_seed
from cpamp.state_evolution import SeTrajectory, ensemble_se_step, se_init

BLOWUP = 1e12


class AmpDivergenceError(FloatingPointError):
    def __init__(self, t, diagnostics=None):
        super().__init__(f"AMP iterate diverged at iteration {t}")
        self.t = t
        self.diagnostics = diagnostics


@dataclass
class AmpState:
    theta: np.ndarray
    b_iter: np.ndarray | None
    r_hat: np.ndarray
    b_hat: np.ndarray
    f_corr: np.ndarray
    c_corr: np.ndarray
    t: int = 0


@dataclass
class AmpDiagnostics:
    records: list = field(default_factory=list)

    def to_jsonl(self):
        return "\n".join(json.dumps(r) for r in self.records) + "\n"


def _check(arrays, t):
    for a in arrays:
        if not np.all(np.isfinite(a)) or np.abs(a).max(initial=0) > BLOWUP:
            raise AmpDivergenceError(t)


def amp_init(dataset, prior, seed):
    if prior.L is None or dataset.B is not None and dataset.B.shape[1] != prior.L:
        raise ValueError("prior dimension does not match the dataset signal")
    rng = np.random.default_rng(seed)
    L = prior.L
    b_hat = prior.signal.sample(dataset.p, rng)
    theta = dataset.X @ b_hat
    z = np.zeros((L, L))
    return AmpState(theta=theta, b_iter=None, r_hat=np.zeros((dataset.n, L)),
                    b_hat=b_hat, f_corr=z, c_corr=z, t=0)


def amp_step(state, dataset, prior, se, se_next, model, onsager=True):
    """One cycle from Theta^t to Theta^{t+1}.

    se parametrizes g*^t (via its Theta channel), se_next parametrizes f*^{t+1}.
    """
    X, y = dataset.X, dataset.y
    pi = prior.changepoint.marginals
    ch = se.channel
    sigma = model.noise_sd
    r_hat = g_star(model.variant, state.theta, y, pi, ch, sigma)
    C = g_mean_jacobian(model.variant, state.theta, y, pi, ch, sigma)
    b_iter = X.T @ r_hat - (state.b_hat @ C.T if onsager else 0.0)
    b_hat = f_star(b_iter, se_next.nu_b, se_next.kappa_b, prior.signal)
    F = f_star_mean_jacobian(b_iter, se_next.nu_b, se_next.kappa_b, prior.signal) \
        * dataset.p / dataset.n
    theta = X @ b_hat - (r_hat @ F.T if onsager else 0.0)
    _check((r_hat, b_iter, b_hat, theta), state.t + 1)
    return AmpState(theta=theta, b_iter=b_iter, r_hat=r_hat, b_hat=b_hat,
                    f_corr=F, c_corr=C, t=state.t + 1)


def _record(state, dataset, se, ch_cond, start):
    rec = {"t": state.t, "se_mse": None if np.isnan(se.mse) else float(se.mse),
           "cond_cov": ch_cond, "wall_time": time.perf_counter() - start}
    n, p = dataset.n, dataset.p
    rec["kappa_b_hat"] = (state.r_hat.T @ state.r_hat / n).tolist()
    if dataset.B is not None:
        B = dataset.B
        rec["mse"] = float(np.sum((state.b_hat - B) ** 2) / p)
        den = np.linalg.norm(state.b_hat) * np.linalg.norm(B)
        rec["correlation"] = float(np.sum(state.b_hat * B) / den) if den > 0 else 0.0
        rec["nu_theta_hat"] = (B.T @ state.b_hat / n).tolist()
    return rec


def run_amp(dataset, prior, model, max_iter=15, tol=1e-6, seed=0, mc_samples=1000,
            se=None, onsager=True):
    """Iterate until max_iter or the relative change of Bhat drops below tol.

    The ensemble SE is advanced alongside (or taken from `se` if given).
    Returns (final state, diagnostics, SE trajectory up to the final t).
    """
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    start = time.perf_counter()
    delta = dataset.n / dataset.p
    se_seed = derive_seed(seed, 1)
    if se is None:
        traj = SeTrajectory([se_init(prior, delta, mc_samples, se_seed)], mc_samples, se_seed)
    else:
        traj = SeTrajectory(list(se.params[:1]), se.mc_samples, se.seed)
    state = amp_init(dataset, prior, derive_seed(seed, 0))
    diag = AmpDiagnostics()
    diag.records.append(_record(state, dataset, traj[0], traj[0].channel.condition_number, start))
    for t in range(max_iter):
        if se is not None:
            traj.params.append(se[t + 1])
        else:
            traj.params.append(ensemble_se_step(traj[t], prior, model, delta, mc_samples,
                                                derive_seed(se_seed, t)))
        try:
            new = amp_step(state, dataset, prior, traj[t], traj[t + 1], model, onsager)
        except AmpDivergenceError as err:
            err.diagnostics = diag
            raise
        diag.records.append(_record(new, dataset, traj[t + 1],
                                    traj[t].channel.condition_number, start))
        change = np.sum((new.b_hat - state.b_hat) ** 2)
        scale = max(np.sum(state.b_hat ** 2), 1e-300)
        state = new
        if change / scale < tol:
            break
    traj.params = traj.params[: state.t + 1]
    return state, diag, traj
