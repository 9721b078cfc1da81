import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cpamp.priors import (BernoulliGaussian, ChangePointPrior, DiscreteRows, GaussianRows,
                          SparseDifference, enumerate_configs, f_star, f_star_jacobian,
                          marginal_psi, sample_signal_matrix)

PRIORS = [
    GaussianRows(np.array([[1.0, 0.3, 0.0], [0.3, 1.5, 0.2], [0.0, 0.2, 0.8]])),
    BernoulliGaussian(0.4, 2.0 * np.eye(3)),
    DiscreteRows(np.array([[1.0, 1.0, 1.0], [1.0, -1.0, 0.5], [-2.0, 0.0, 1.0]]),
                 np.array([0.5, 0.3, 0.2])),
    SparseDifference(1.0, 2.0, 0.5, 3),
]


def _channel(rng, L=3):
    A = rng.standard_normal((L, L))
    nu = np.eye(L) + 0.2 * A
    B = rng.standard_normal((L, L))
    kappa = B @ B.T / L + 0.3 * np.eye(L)
    return nu, kappa


def _fd_jacobian(V, nu, kappa, prior, h):
    L = V.shape[0]
    J = np.zeros((L, L))
    for b in range(L):
        e = np.zeros(L)
        e[b] = h
        J[:, b] = (f_star(V + e, nu, kappa, prior) - f_star(V - e, nu, kappa, prior)) / (2 * h)
    return J


def test_zero_covariance_gives_zero_matrix():
    B = sample_signal_matrix(GaussianRows(np.zeros((2, 2))), 50, 2, 0)
    assert np.array_equal(B, np.zeros((50, 2)))


def test_bernoulli_gaussian_zero_fraction():
    delta = 1.5
    B = sample_signal_matrix(BernoulliGaussian(0.5, delta * np.eye(2)), 100_000, 2, 1)
    zero = np.all(B == 0, axis=1).mean()
    assert abs(zero - 0.5) < 0.01


def test_discrete_rows_mean():
    B = sample_signal_matrix(DiscreteRows([1.0, -1.0], [0.5, 0.5]), 100_000, 1, 2)
    assert abs(B.mean()) < 0.01


def test_sample_dimension_mismatch():
    with pytest.raises(ValueError):
        sample_signal_matrix(GaussianRows(np.eye(2)), 10, 3, 0)


@pytest.mark.parametrize("prior", PRIORS, ids=["gauss", "bg", "discrete", "sparse_diff"])
def test_sample_second_moment(prior):
    B = sample_signal_matrix(prior, 40_000, 3, 7)
    assert np.allclose(B.T @ B / len(B), prior.second_moment(), atol=0.1)


def test_sparse_difference_keeps_column_power():
    sd = SparseDifference(3.0, 5.0, 0.3, 4)
    assert np.allclose(np.diag(sd.second_moment()), 3.0)
    assert len(sd.components[0]) == 8
    assert np.isclose(sd.components[0].sum(), 1.0)


def test_gaussian_noiseless_channel_is_identity(rng):
    V = rng.standard_normal((5, 3))
    out = f_star(V, np.eye(3), 1e-10 * np.eye(3), PRIORS[0])
    assert np.allclose(out, V, atol=1e-6)


def test_tanh_case():
    v = np.linspace(-4, 4, 41)[:, None]
    prior = DiscreteRows([1.0, -1.0], [0.5, 0.5])
    assert np.allclose(f_star(v, np.eye(1), np.eye(1), prior)[:, 0], np.tanh(v[:, 0]), atol=1e-14)
    J = f_star_jacobian(v, np.eye(1), np.eye(1), prior)[:, 0, 0]
    assert np.allclose(J, 1 - np.tanh(v[:, 0]) ** 2, atol=1e-14)


def test_bernoulli_gaussian_alpha_one_collapses(rng):
    S = PRIORS[0].cov
    nu, kappa = _channel(rng)
    V = rng.standard_normal((20, 3))
    a = f_star(V, nu, kappa, BernoulliGaussian(1.0, S))
    b = f_star(V, nu, kappa, GaussianRows(S))
    assert np.array_equal(a, b)


def test_gaussian_jacobian_constant(rng):
    S = PRIORS[0].cov
    nu, kappa = _channel(rng)
    J = f_star_jacobian(rng.standard_normal((4, 3)), nu, kappa, GaussianRows(S))
    expect = S @ nu @ np.linalg.inv(nu.T @ S @ nu + kappa)
    assert np.allclose(J, expect[None], atol=1e-12)


@pytest.mark.parametrize("prior", PRIORS, ids=["gauss", "bg", "discrete", "sparse_diff"])
def test_jacobian_finite_difference(prior, rng):
    nu, kappa = _channel(rng)
    for _ in range(10):
        V = 2 * rng.standard_normal(3)
        h = 1e-5 * (1 + np.linalg.norm(V))
        J = f_star_jacobian(V, nu, kappa, prior)
        assert np.max(np.abs(J - _fd_jacobian(V, nu, kappa, prior, h))) < 1e-5


def test_nan_input_rejected():
    with pytest.raises(ValueError):
        f_star(np.array([np.nan, 0.0, 0.0]), np.eye(3), np.eye(3), PRIORS[0])


def test_gaussian_contraction(rng):
    S = PRIORS[0].cov
    nu, kappa = _channel(rng)
    B = rng.multivariate_normal(np.zeros(3), S, 20_000)
    V = B @ nu + rng.multivariate_normal(np.zeros(3), kappa, 20_000)
    f = f_star(V, nu, kappa, GaussianRows(S))
    gap = S - f.T @ f / len(f)
    assert np.linalg.eigvalsh((gap + gap.T) / 2).min() > -0.05


@pytest.mark.parametrize("prior", PRIORS + [DiscreteRows([[2.0, 1.0, 0.0], [0.0, 1.0, 3.0]], [0.7, 0.3])],
                         ids=["gauss", "bg", "discrete", "sparse_diff", "shifted"])
def test_posterior_mean_unbiased(prior, rng):
    nu, kappa = _channel(rng)
    m = 10_000
    B = prior.sample(m, rng)
    V = B @ nu + rng.standard_normal((m, 3)) @ np.linalg.cholesky(kappa).T
    f = f_star(V, nu, kappa, prior)
    se = f.std(axis=0) / np.sqrt(m)
    assert np.all(np.abs(f.mean(axis=0) - prior.mean()) < 3 * se + 1e-12)


# ------------------------------------------------------------ change points


def test_marginal_first_row_always_label_one():
    cp = ChangePointPrior(8, 2, 1, (0, 1))
    assert np.allclose(marginal_psi(cp, 1), [1, 0])


def test_marginal_counting_example():
    cp = ChangePointPrior(4, 2, 1, (0, 1))
    assert np.allclose(marginal_psi(cp, 3), [1 / 3, 2 / 3])


def test_marginal_zero_change_points():
    cp = ChangePointPrior(9, 3, 1, (1, 0, 0))
    assert np.allclose(cp.marginals, np.tile([1, 0, 0], (9, 1)))


def test_marginal_out_of_range():
    with pytest.raises(ValueError):
        marginal_psi(ChangePointPrior(4, 2, 1, (0, 1)), 5)


def test_enumerate_single_change_point():
    cfgs = enumerate_configs(ChangePointPrior(10, 2, 1, (0, 1)))
    assert len(cfgs) == 9
    assert np.allclose([p for _, p in cfgs], 1 / 9)


def _brute(n, L, D, stride, k):
    grid = range(1 + stride, n + 1, stride)
    out = []
    for c in itertools.combinations(grid, k):
        b = (1,) + c + (n + 1,)
        if all(b[j + 1] - b[j] >= D for j in range(len(b) - 1)):
            out.append(c)
    return out


def test_enumerate_matches_brute_force():
    brute = _brute(10, 3, 3, 1, 2)
    cfgs = enumerate_configs(ChangePointPrior(10, 3, 3, (0, 0, 1)))
    assert len(cfgs) == len(brute) == 3
    from cpamp.model import psi_to_eta
    assert sorted(tuple(psi_to_eta(p)) for p, _ in cfgs) == sorted(brute)


def test_enumerate_zero_count_single_config():
    cfgs = enumerate_configs(ChangePointPrior(10, 2, 1, (1, 0)))
    assert len(cfgs) == 1 and cfgs[0][1] == 1.0
    assert cfgs[0][0].tolist() == [1] * 10


def test_separation_too_large():
    with pytest.raises(ValueError):
        ChangePointPrior(10, 2, 10, (0, 1))


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 40), st.integers(1, 4), st.integers(1, 6), st.integers(1, 3),
       st.lists(st.floats(0.01, 1), min_size=4, max_size=4))
def test_prior_tables_are_distributions(n, L, D, stride, w):
    w = np.array(w[:L]) / np.sum(w[:L])
    D = min(D, n - 1) if n > 1 else 1
    try:
        cp = ChangePointPrior(n, L, D, tuple(w), stride)
        etas, logp = cp.table
    except ValueError:
        return
    assert abs(np.exp(logp).sum() - 1) < 1e-12
    assert np.allclose(cp.marginals.sum(axis=1), 1, atol=1e-12)
    assert np.all(cp.marginals >= 0)
    for k in range(L):
        if w[k] > 0:
            expect = len(_brute(n, L, D, stride, k))
            got = int(((etas <= n).sum(axis=1) == k).sum())
            assert got == expect
