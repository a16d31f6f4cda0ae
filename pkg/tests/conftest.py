import numpy as np
import pytest

from cpdp.glm import LOGISTIC, design_matrix
from cpdp.market import THETA1, THETA2, UniformCovariates


def logistic_stream(rng, n, theta, lo=1.0, hi=15.0):
    """Experiment data from the d = 50 synthetic design at uniform prices."""
    d = len(theta)
    Z = UniformCovariates(d)(rng, n)
    X = design_matrix(Z, rng.uniform(lo, hi, n))
    y = LOGISTIC.sample(LOGISTIC.dpsi(X @ theta), rng)
    return X, y


def shifted_stream(rng, n_before, n_after, a=THETA1, b=THETA2):
    X1, y1 = logistic_stream(rng, n_before, a)
    X2, y2 = logistic_stream(rng, n_after, b)
    return np.vstack([X1, X2]), np.r_[y1, y2]


def newton_mle(family, X, y, iters=100):
    """Plain Newton-Raphson for the unpenalised GLM (independent of the package solver)."""
    theta = np.zeros(X.shape[1])
    for _ in range(iters):
        eta = X @ theta
        g = X.T @ (family.dpsi(eta) - y)
        H = X.T @ (X * family.ddpsi(eta)[:, None])
        step = np.linalg.solve(H, g)
        theta = theta - step
        if np.max(np.abs(step)) < 1e-13:
            break
    return theta


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
