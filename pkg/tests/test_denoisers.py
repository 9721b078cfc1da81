import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate
from scipy.special import expit
from scipy.stats import norm

from cpamp.denoisers import (GAMMA, ThetaChannel, g_du_linear, g_jacobian_fd,
                             g_jacobian_linear, g_star, g_star_relu, gaussian_condition,
                             relu_branches, truncated_mean_upper)


def unit_channel(L=1, k=1.0):
    return ThetaChannel(np.eye(L), np.eye(L), k * np.eye(L))


def random_channel(rng, L=3):
    A = rng.standard_normal((L, L))
    rho = A @ A.T / L + np.eye(L)
    nu = 0.7 * rho + 0.1 * rng.standard_normal((L, L))
    B = rng.standard_normal((L, L))
    return ThetaChannel(rho, nu, B @ B.T / L + 0.5 * np.eye(L))


def test_gaussian_condition_bivariate():
    cm = gaussian_condition([0, 0], [[1, 0.5], [0.5, 1]], [1], [2.0])
    assert np.allclose(cm.mean, [1.0]) and np.allclose(cm.cov, [[0.75]])


def test_gaussian_condition_slab_oracle():
    rng = np.random.default_rng(0)
    cov = np.array([[2.0, 0.6, 0.3], [0.6, 1.0, -0.2], [0.3, -0.2, 1.5]])
    mean = np.array([0.5, -1.0, 0.2])
    x = rng.multivariate_normal(mean, cov, 2_000_000)
    keep = np.abs(x[:, 2] - 1.0) < 0.01
    cm = gaussian_condition(mean, cov, [2], [1.0])
    sel = x[keep, :2]
    assert np.allclose(sel.mean(0), cm.mean, atol=4 * np.sqrt(cov[0, 0] / keep.sum()))
    assert np.allclose(np.cov(sel.T), cm.cov, atol=0.05)


def test_scalar_linear_closed_form():
    ch = unit_channel()
    v, u = np.linspace(-3, 3, 13), np.linspace(2, -2, 13)
    g = g_star("linear", v[:, None], u, np.ones((13, 1)), ch, 1.0)[:, 0]
    assert np.allclose(g, (u - v / 2) / 1.5, atol=1e-12)


def test_scalar_linear_monte_carlo():
    # g = E[Z - E[Z|V] | V, u] / var(Z|V) estimated from a thin slab
    rng = np.random.default_rng(1)
    m = 4_000_000
    z = rng.standard_normal(m)
    v = z + rng.standard_normal(m)
    u = z + rng.standard_normal(m)
    keep = (np.abs(v - 0.8) < 0.02) & (np.abs(u - 0.3) < 0.02)
    est = (z[keep].mean() - 0.4) / 0.5
    g = g_star("linear", [0.8], 0.3, [1.0], unit_channel(), 1.0)[0]
    assert abs(est - g) < 4 * np.sqrt(0.5 / 1.5 / keep.sum()) / 0.5 + 0.02


def test_single_label_matches_gaussian_condition():
    rng = np.random.default_rng(2)
    ch = random_channel(rng)
    sigma = 0.4
    for _ in range(5):
        V = rng.standard_normal(3)
        u = rng.standard_normal()
        for l in range(3):
            pi = np.eye(3)[l]
            # joint law of (Z, V, u) with u = Z_l + sigma N(0,1)
            rho, nu, kap = ch.rho, ch.nu_theta, ch.kappa_theta
            cov = np.zeros((7, 7))
            cov[:3, :3] = rho
            cov[:3, 3:6] = nu
            cov[3:6, :3] = nu.T
            cov[3:6, 3:6] = ch.sigma_V
            cov[:6, 6] = cov[6, :6] = cov[:6, l]
            cov[6, 6] = rho[l, l] + sigma ** 2
            post = gaussian_condition(np.zeros(7), cov, [3, 4, 5, 6], np.r_[V, u]).mean
            prior = gaussian_condition(np.zeros(6), cov[:6, :6], [3, 4, 5], V).mean
            expect = np.linalg.solve(ch.cond_cov, post - prior)
            got = g_star("linear", V, u, pi, ch, sigma)
            assert np.allclose(got, expect, atol=1e-10)


def test_symmetric_input_gives_zero():
    ch = unit_channel(2)
    assert np.allclose(g_star("linear", np.zeros(2), 0.0, [0.5, 0.5], ch, 1.0), 0)
    assert np.allclose(g_star("logistic", np.zeros(2), 1.0, [0.5, 0.5], ch) +
                       g_star("logistic", np.zeros(2), 0.0, [0.5, 0.5], ch), 0)


def test_logistic_label_antisymmetry():
    rng = np.random.default_rng(3)
    ch = random_channel(rng)
    V = rng.standard_normal((20, 3))
    pi = np.full((20, 3), 1 / 3)
    assert np.allclose(g_star("logistic", V, 1.0, pi, ch), -g_star("logistic", -V, 0.0, pi, ch),
                       atol=1e-12)


def test_probit_constant():
    assert abs(GAMMA - np.sqrt(np.pi / 8)) < 1e-15
    assert abs(GAMMA - 0.6266570686577501) < 1e-15


@pytest.mark.parametrize("kappa", [0.5, 1.0])
def test_logistic_probit_vs_exact_quadrature(kappa):
    # exact posterior shift for a logistic link, L=1, rho=1, nu=0.5
    ch = ThetaChannel(np.eye(1), 0.5 * np.eye(1), kappa * np.eye(1))
    sd_v = np.sqrt(ch.sigma_V[0, 0])
    M, c = ch.M[0, 0], ch.cond_var[0]
    worst = 0.0
    for v in np.linspace(-sd_v, sd_v, 9):
        mu = v * M
        for u in (0.0, 1.0):
            def lik(z):
                p = expit(z)
                return (p if u else 1 - p) * norm.pdf(z, mu, np.sqrt(c))
            Zs = integrate.quad(lik, -np.inf, np.inf)[0]
            Z1 = integrate.quad(lambda z: z * lik(z), -np.inf, np.inf)[0]
            exact = (Z1 / Zs - mu) / c
            got = g_star("logistic", [v], u, [1.0], ch)[0]
            worst = max(worst, abs(got - exact))
    assert worst < 0.02


def test_relu_truncated_mean_standard():
    assert abs(truncated_mean_upper(0.0, 1.0) - np.sqrt(2 / np.pi)) < 1e-15


def test_relu_zero_branch_vanishes_for_large_u():
    log0, _, log1, _ = relu_branches(np.array(0.0), np.array(8.0), np.array(1.0), 0.5)
    assert np.exp(log0 - np.logaddexp(log0, log1)) < 1e-8


def test_relu_needs_noise():
    with pytest.raises(ValueError):
        g_star_relu(np.zeros(1), 0.0, [1.0], unit_channel(), 0.0)


@pytest.mark.parametrize("L", [1, 2])
def test_relu_matches_quadrature(L):
    # posterior mean of Z_1 given V, u by direct integration over the label-1 coordinate
    ch = unit_channel(L, 0.7)
    sigma = 0.6
    M, c = ch.M[0, 0], ch.cond_var[0]
    pi = np.eye(L)[0]
    for v, u in [(0.3, 0.0), (-0.5, 0.0), (1.2, 0.9), (-0.4, 0.2)]:
        V = np.full(L, v)
        mu = v * M

        def lik(z):
            return norm.pdf(z, mu, np.sqrt(c)) * norm.pdf(u - max(z, 0), 0, sigma)
        Zs = integrate.quad(lik, -12, 12, points=[0.0], limit=200)[0]
        Z1 = integrate.quad(lambda z: z * lik(z), -12, 12, points=[0.0], limit=200)[0]
        got = g_star("relu", V, u, pi, ch, sigma)[0]
        assert abs(got - (Z1 / Zs - mu) / c) < 1e-4


def test_linear_jacobian_matches_finite_difference():
    rng = np.random.default_rng(4)
    ch = random_channel(rng)
    V = rng.standard_normal((10, 3))
    u = rng.standard_normal(10)
    pi = rng.dirichlet(np.ones(3), 10)
    Ja = g_jacobian_linear(V, u, pi, ch, 0.5)
    Jf = g_jacobian_fd("linear", V, u, pi, ch, 0.5)
    assert np.max(np.abs(Ja - Jf)) < 1e-8
    h = 1e-6
    du = (g_star("linear", V, u + h, pi, ch, 0.5) - g_star("linear", V, u - h, pi, ch, 0.5)) / (2 * h)
    assert np.max(np.abs(g_du_linear(V, u, pi, ch, 0.5) - du)) < 1e-7


def test_single_label_jacobian_is_constant():
    rng = np.random.default_rng(5)
    ch = random_channel(rng)
    pi = np.eye(3)[1]
    J1 = g_jacobian_linear(rng.standard_normal(3), 0.4, pi, ch, 0.3)
    J2 = g_jacobian_linear(rng.standard_normal(3), -2.0, pi, ch, 0.3)
    assert np.allclose(J1, J2, atol=1e-12)


def test_logistic_jacobian_label_swap():
    rng = np.random.default_rng(6)
    ch = random_channel(rng)
    V = rng.standard_normal((5, 3))
    pi = np.full((5, 3), 1 / 3)
    J1 = g_jacobian_fd("logistic", V, 1.0, pi, ch)
    J0 = g_jacobian_fd("logistic", -V, 0.0, pi, ch)
    assert np.allclose(J1, J0, atol=1e-7)


def test_finite_difference_converges_quadratically():
    rng = np.random.default_rng(7)
    ch = random_channel(rng)
    V, u, pi = rng.standard_normal(3), 0.7, np.array([0.2, 0.5, 0.3])
    exact = g_jacobian_linear(V, u, pi, ch, 0.5)
    e1 = np.abs(g_jacobian_fd("linear", V, u, pi, ch, 0.5, h_scale=400) - exact).max()
    e2 = np.abs(g_jacobian_fd("linear", V, u, pi, ch, 0.5, h_scale=200) - exact).max()
    assert 3.0 < e1 / e2 < 5.0


@pytest.mark.parametrize("variant,sigma", [("linear", 0.5), ("logistic", 0.0), ("relu", 0.5)])
def test_score_has_zero_mean_and_stein_identity(variant, sigma):
    # E[g] = 0 and E[Z g^T] = C E[g g^T] for the exact posterior score
    rng = np.random.default_rng(8)
    L, m = 2, 400_000
    ch = ThetaChannel(np.eye(L), 0.8 * np.eye(L), 0.6 * np.eye(L))
    pi = np.array([0.3, 0.7])
    Z = rng.standard_normal((m, L))
    V = Z @ ch.nu_theta + rng.standard_normal((m, L)) @ np.linalg.cholesky(ch.kappa_theta).T
    lab = (rng.random(m) < pi[1]).astype(int)
    z = Z[np.arange(m), lab]
    if variant == "linear":
        u = z + sigma * rng.standard_normal(m)
    elif variant == "logistic":
        u = (rng.random(m) < expit(z)).astype(float)
    else:
        u = np.maximum(z, 0) + sigma * rng.standard_normal(m)
    g = g_star(variant, V, u, np.tile(pi, (m, 1)), ch, sigma)
    se = g.std(0) / np.sqrt(m)
    if variant != "logistic":
        assert np.all(np.abs(g.mean(0)) < 4 * se)
        lhs = Z.T @ g / m
        rhs = ch.cond_cov @ (g.T @ g / m)
        assert np.allclose(lhs, rhs, atol=0.01)
    else:
        # probit surrogate: small but nonzero bias is expected
        assert np.all(np.abs(g.mean(0)) < 0.01)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=3), st.floats(-50, 50),
       st.sampled_from(["linear", "logistic", "relu"]))
def test_outputs_finite_for_large_inputs(V, u, variant):
    ch = random_channel(np.random.default_rng(9))
    if variant == "logistic":
        u = float(u > 0)
    g = g_star(variant, np.array(V), u, [0.2, 0.3, 0.5], ch, 0.5)
    assert np.all(np.isfinite(g))


def test_underflow_flag():
    ch = unit_channel(2)
    g, bad = g_star("linear", np.zeros((2, 2)), 0.0, np.zeros((2, 2)), ch, 1.0, return_flags=True)
    assert bad.all() and np.all(g == 0)


@pytest.mark.parametrize("a", [-2.0, 0.0, 2.0])
@pytest.mark.parametrize("b", [0.5, 1.0, 2.0])
def test_probit_gaussian_integral(a, b):
    x = np.linspace(-12, 12, 1_000_001)
    val = np.trapezoid(norm.cdf(a + b * x) * norm.pdf(x), x)
    assert abs(val - norm.cdf(a / np.sqrt(1 + b * b))) < 1e-6
    if a == 0.0:
        assert norm.cdf(a / np.sqrt(1 + b * b)) == 0.5
