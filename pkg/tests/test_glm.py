import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cpdp.glm import (GAUSSIAN, LOGISTIC, POISSON, DegenerateSensitivityError, GlmFamily,
                      Observation, design_matrix, expected_demand, get_family,
                      kl_divergence_mc, neg_log_likelihood, nll_gradient, optimal_price,
                      psi_derivatives, revenue, safe_optimal_price, sample_demand)
from cpdp.market import THETA1, THETA2, THETA2_STAR, THETA3, THETA4, UniformCovariates

FAMILIES = [GAUSSIAN, LOGISTIC, POISSON]


def test_psi_derivatives_closed_forms():
    assert psi_derivatives(GAUSSIAN, 2.0) == (2.0, 2.0, 1.0)
    v = psi_derivatives(LOGISTIC, 0.0)
    assert v == pytest.approx((math.log(2), 0.5, 0.25), abs=1e-15)
    assert psi_derivatives(POISSON, 0.0) == (1.0, 1.0, 1.0)


def test_logistic_is_overflow_safe():
    with np.errstate(over="raise", invalid="raise", divide="raise"):
        psi, d1, d2 = psi_derivatives(LOGISTIC, 800.0)
        assert psi == pytest.approx(800.0)
        assert d1 == 1.0 and d2 >= 0.0
        psi, d1, d2 = psi_derivatives(LOGISTIC, -800.0)
        assert psi >= 0.0 and psi < 1e-300 and d1 >= 0.0


@pytest.mark.parametrize("family", FAMILIES)
def test_strict_convexity_on_working_range(family):
    x = np.linspace(-30, 30, 2001)
    assert np.all(family.ddpsi(x) > 0)


def test_get_family():
    assert get_family("logistic") is LOGISTIC
    assert get_family(POISSON) is POISSON
    with pytest.raises(ValueError):
        get_family("gamma")
    with pytest.raises(ValueError):
        GlmFamily(LOGISTIC.kind, scale=0.0)


def test_expected_demand_and_revenue_examples():
    theta = np.array([2.0, -1.0])  # z'alpha = 2 for z = (1,)
    assert expected_demand(GAUSSIAN, theta, [1.0], 1.0) == pytest.approx(1.0)
    assert revenue(GAUSSIAN, theta, [1.0], 1.0) == pytest.approx(1.0)
    assert expected_demand(LOGISTIC, np.array([0.0, 0.0]), [1.0], 5.0) == 0.5
    # z = (1, 1, 1, 1, 1, 0, ...) gives z'alpha = 0 + 1 + 1 + 2 + 2 = 6, so eta = 6 - 1
    z = np.r_[1.0, np.ones(4), np.zeros(44)]
    assert expected_demand(LOGISTIC, THETA1, z, 4.0) == pytest.approx(1 / (1 + math.exp(-5)))
    z = np.r_[1.0, 1.0, 0.0, 1.0, np.zeros(45)]
    assert expected_demand(LOGISTIC, THETA1, z, 4.0) == pytest.approx(0.8808, abs=5e-5)
    theta = np.array([3.0, -0.25])
    assert revenue(LOGISTIC, theta, [1.0], 8.0) == pytest.approx(8 / (1 + math.exp(-1)))
    for fam in FAMILIES:
        assert revenue(fam, theta, [1.0], 0.0) == 0.0


def test_expected_demand_dimension_mismatch():
    with pytest.raises(ValueError):
        expected_demand(LOGISTIC, THETA1, np.ones(3), 1.0)


def _bisect(f, lo, hi, tol=1e-12):
    flo = f(lo)
    assert flo * f(hi) < 0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f(mid) * flo > 0:
            lo, flo = mid, f(mid)
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_optimal_price_examples():
    assert optimal_price(GAUSSIAN, [2.0, -1.0], [1.0], 0, 50) == pytest.approx(1.0)
    assert optimal_price(POISSON, [0.3, -0.5], [1.0], 0, 50) == pytest.approx(2.0)
    # logistic: bisection on the stationarity equation and a revenue grid search
    p = optimal_price(LOGISTIC, [3.0, -0.25], [1.0], 0, 50)
    root = _bisect(lambda q: 1 + math.exp(3 - 0.25 * q) - 0.25 * q, 0, 50)
    grid = np.linspace(0, 50, 500001)
    best = grid[np.argmax(revenue(LOGISTIC, [3.0, -0.25], np.ones((grid.size, 1)), grid))]
    assert p == pytest.approx(root, abs=1e-9)
    assert abs(p - best) < 2e-4
    assert p == pytest.approx(10.23, abs=5e-3)


def test_optimal_price_clamps_and_degenerate():
    assert optimal_price(GAUSSIAN, [200.0, -1.0], [1.0], 0, 50) == 50
    assert optimal_price(POISSON, [0.0, -0.01], [1.0], 0, 50) == 50
    with pytest.raises(DegenerateSensitivityError):
        optimal_price(LOGISTIC, [1.0, 0.0], [1.0], 0, 50)
    assert safe_optimal_price(LOGISTIC, [1.0, 0.2], [1.0], 0, 50) == (50, True)
    p, flag = safe_optimal_price(LOGISTIC, [1.0, -0.2], [1.0], 0, 50)
    assert not flag and 0 < p < 50
    with pytest.raises(ValueError):
        optimal_price(LOGISTIC, [1.0, -0.2], [1.0], 5, 5)


def test_optimal_price_vectorised_matches_scalar(rng):
    Z = UniformCovariates(50)(rng, 20)
    vec = optimal_price(LOGISTIC, THETA1, Z, 0, 50)
    for z, p in zip(Z, vec):
        assert optimal_price(LOGISTIC, THETA1, z, 0, 50) == p


def test_optimal_price_grid_optimality():
    """Random logistic fixtures: no grid price beats the returned price."""
    rng = np.random.default_rng(7)
    grid = np.linspace(0, 20, 10000)
    for _ in range(100):
        u = rng.uniform(-5, 5)
        beta = rng.uniform(-3, -0.05)
        theta = [u, beta]
        p = optimal_price(LOGISTIC, theta, [1.0], 0, 20)
        r_best = revenue(LOGISTIC, theta, [1.0], p)
        r_grid = revenue(LOGISTIC, theta, np.ones((grid.size, 1)), grid)
        assert r_best >= r_grid.max() - 1e-8


@given(u=st.floats(-10, 10), beta=st.floats(-5, -0.01), delta=st.floats(-3, 3))
def test_gaussian_regret_identity(u, beta, delta):
    theta = [u, beta]
    p_star = -u / (2 * beta)
    p = p_star + delta
    gap = revenue(GAUSSIAN, theta, [1.0], p_star) - revenue(GAUSSIAN, theta, [1.0], p)
    expected = -beta * delta ** 2
    assert gap == pytest.approx(expected, rel=1e-9, abs=1e-9)


def test_optimal_price_lipschitz_sanity():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(2000):
        a, a2 = rng.uniform(-3, 3, 2)
        b, b2 = rng.uniform(-2, -0.05, 2)
        p1 = optimal_price(LOGISTIC, [a, b], [1.0], 0, 100)
        p2 = optimal_price(LOGISTIC, [a2, b2], [1.0], 0, 100)
        denom = abs(a - a2) + abs(b - b2)
        if denom > 0:
            worst = max(worst, abs(p1 - p2) / denom)
    assert worst <= 1e3


def test_sample_demand_laws():
    rng = np.random.default_rng(11)
    y = sample_demand(LOGISTIC, THETA1, UniformCovariates(50)(rng, 1)[0], 5.0, rng)
    assert y in (0.0, 1.0)
    n = 10 ** 6
    theta = [0.0, 0.0]
    X = np.zeros((n, 1))
    g = GAUSSIAN.sample(np.zeros(n), rng)
    assert abs(g.mean()) < 0.005
    pois = POISSON.sample(POISSON.dpsi(X[:, 0]), rng)
    assert abs(pois.mean() - 1) < 0.005
    ys = sample_demand(LOGISTIC, theta, np.ones((1000, 1)), np.zeros(1000), rng)
    assert set(np.unique(ys)) <= {0.0, 1.0}


def test_nll_examples():
    obs = [Observation(0.0, [1.0, 2.0], 3.0)]
    assert neg_log_likelihood(GAUSSIAN, np.zeros(3), obs) == 0.0
    assert np.all(nll_gradient(GAUSSIAN, np.zeros(3), obs) == 0.0)
    one = [Observation(1.0, [1.0], 2.0)]
    assert neg_log_likelihood(LOGISTIC, np.zeros(2), one) == pytest.approx(math.log(2))
    with pytest.raises(ValueError):
        neg_log_likelihood(LOGISTIC, np.zeros(2), [])


def _fd_gradient(f, theta):
    g = np.empty_like(theta)
    for i in range(theta.size):
        h = 1e-6 * (1 + abs(theta[i]))
        e = np.zeros_like(theta)
        e[i] = h
        g[i] = (f(theta + e) - f(theta - e)) / (2 * h)
    return g


def test_gradient_matches_finite_differences():
    """100 random (family, theta, data) fixtures."""
    rng = np.random.default_rng(5)
    for k in range(100):
        fam = FAMILIES[k % 3]
        n, d = rng.integers(5, 40), rng.integers(1, 6)
        X = rng.normal(size=(n, d)) * 0.5
        theta = rng.normal(size=d) * 0.5
        y = fam.sample(fam.dpsi(X @ theta), rng)
        w = rng.uniform(0.1, 2.0, n) if k % 2 else None
        data = (X, y)
        g = nll_gradient(fam, theta, data, w)
        fd = _fd_gradient(lambda t: neg_log_likelihood(fam, t, data, w), theta)
        assert np.max(np.abs(g - fd)) / (1 + np.max(np.abs(g))) <= 1e-6


def test_observation_and_design_matrix():
    o = Observation(1.0, [1.0, 0.5], 3.0)
    assert np.array_equal(o.x, [1.0, 0.5, 3.0])
    X = design_matrix(np.ones((3, 2)), [1, 2, 3])
    assert X.shape == (3, 3) and np.array_equal(X[:, -1], [1, 2, 3])
    with pytest.raises(ValueError):
        design_matrix(np.ones((3, 2)), [1, 2])


def test_conditional_kl_is_nonnegative_and_zero_on_diagonal():
    eta = np.linspace(-5, 5, 101)
    for fam in FAMILIES:
        assert np.all(fam.conditional_kl(eta, eta) == 0)
        assert np.all(fam.conditional_kl(eta, eta[::-1]) >= 0)


def test_kl_self_is_zero(rng):
    est, se = kl_divergence_mc(LOGISTIC, THETA1, THETA1, UniformCovariates(50),
                               lambda r, n: r.uniform(1, 15, n), 1000, rng)
    assert est == 0.0


@pytest.mark.parametrize("pair, reference", [((THETA1, THETA2), 0.814),
                                             ((THETA1, THETA2_STAR), 0.282),
                                             ((THETA3, THETA4), 0.271)])
def test_kl_between_scenario_models(pair, reference):
    rng = np.random.default_rng(1)
    est, se = kl_divergence_mc(LOGISTIC, *pair, UniformCovariates(50),
                               lambda r, n: r.uniform(1, 15, n), 200000, rng)
    assert se < 0.005
    assert est == pytest.approx(reference, abs=0.02)
