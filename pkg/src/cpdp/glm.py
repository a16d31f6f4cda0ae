"""GLM demand model: link derivatives, likelihood, revenue and optimal prices.

Parameter vectors are plain 1-d float arrays ``theta = (alpha, beta)`` of length
``d``; the last coordinate is the price coefficient. A design row is
``x = (z, p)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, wrightomega


class Kind(str, enum.Enum):
    GAUSSIAN = "gaussian"
    LOGISTIC = "logistic"
    POISSON = "poisson"


class DegenerateSensitivityError(ValueError):
    """Raised when the price coefficient is not negative."""


@dataclass(frozen=True)
class GlmFamily:
    kind: Kind
    scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    # -- psi and derivatives (vectorised) ---------------------------------
    def psi(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind is Kind.GAUSSIAN:
            return 0.5 * x * x
        if self.kind is Kind.LOGISTIC:
            # log(1 + e^x) without overflow
            return np.logaddexp(0.0, x)
        with np.errstate(over="ignore"):
            return np.exp(x)

    def dpsi(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind is Kind.GAUSSIAN:
            return x
        if self.kind is Kind.LOGISTIC:
            return expit(x)
        with np.errstate(over="ignore"):
            return np.exp(x)

    def ddpsi(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind is Kind.GAUSSIAN:
            return np.ones_like(x)
        if self.kind is Kind.LOGISTIC:
            mu = expit(x)
            return mu * (1.0 - mu)
        with np.errstate(over="ignore"):
            return np.exp(x)

    def sample(self, mean, rng: np.random.Generator):
        """Draw demand with the given conditional mean."""
        if self.kind is Kind.GAUSSIAN:
            return rng.normal(mean, np.sqrt(self.scale))
        if self.kind is Kind.LOGISTIC:
            u = rng.random(np.shape(mean)) if np.ndim(mean) else rng.random()
            return (u < mean) * 1.0
        return rng.poisson(mean) * 1.0

    def conditional_kl(self, eta1, eta2):
        """KL(f(.|eta1) || f(.|eta2)) for each pair of natural parameters."""
        eta1 = np.asarray(eta1, dtype=float)
        eta2 = np.asarray(eta2, dtype=float)
        # exponential family identity: psi(eta2) - psi(eta1) - psi'(eta1)(eta2 - eta1)
        kl = self.psi(eta2) - self.psi(eta1) - self.dpsi(eta1) * (eta2 - eta1)
        return kl / self.scale


GAUSSIAN = GlmFamily(Kind.GAUSSIAN)
LOGISTIC = GlmFamily(Kind.LOGISTIC)
POISSON = GlmFamily(Kind.POISSON)


def get_family(name: str | GlmFamily) -> GlmFamily:
    if isinstance(name, GlmFamily):
        return name
    kind = Kind(name.lower())
    return {Kind.GAUSSIAN: GAUSSIAN, Kind.LOGISTIC: LOGISTIC, Kind.POISSON: POISSON}[kind]


@dataclass(frozen=True)
class Observation:
    y: float
    z: np.ndarray
    p: float

    @property
    def x(self) -> np.ndarray:
        return np.append(np.asarray(self.z, dtype=float), self.p)


def psi_derivatives(family: GlmFamily, x: float) -> tuple[float, float, float]:
    return (float(family.psi(x)), float(family.dpsi(x)), float(family.ddpsi(x)))


def split_theta(theta):
    theta = np.asarray(theta, dtype=float)
    return theta[:-1], float(theta[-1])


def sparsity(theta, atol: float = 0.0) -> int:
    return int(np.sum(np.abs(np.asarray(theta)) > atol))


def design_matrix(z, p) -> np.ndarray:
    """Stack covariate rows ``z`` (n x (d-1)) with prices ``p`` into X (n x d)."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    p = np.asarray(p, dtype=float).reshape(-1, 1)
    if z.shape[0] != p.shape[0]:
        raise ValueError(f"{z.shape[0]} covariate rows but {p.shape[0]} prices")
    return np.hstack([z, p])


def utility(theta, z) -> np.ndarray | float:
    """Intrinsic utility z'alpha (vectorised over rows of z)."""
    alpha, _ = split_theta(theta)
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != alpha.shape[0]:
        raise ValueError(f"covariates have length {z.shape[-1]}, expected {alpha.shape[0]}")
    return z @ alpha


def expected_demand(family: GlmFamily, theta, z, p):
    _, beta = split_theta(theta)
    return family.dpsi(utility(theta, z) + beta * np.asarray(p, dtype=float))


def revenue(family: GlmFamily, theta, z, p):
    p = np.asarray(p, dtype=float)
    return p * expected_demand(family, theta, z, p)


def _price_from_utility(kind: Kind, u, beta: float, p_l: float, p_u: float):
    if kind is Kind.GAUSSIAN:
        p = -u / (2.0 * beta)
    elif kind is Kind.POISSON:
        p = np.full_like(np.asarray(u, dtype=float), -1.0 / beta)
    else:
        # Stationarity 1 + exp(u + beta p) + beta p = 0. With q = -beta p - 1 it
        # reads q e^q = e^(u-1), so q is the Wright omega function of u - 1.
        p = -(1.0 + wrightomega(np.asarray(u, dtype=float) - 1.0).real) / beta
    return np.clip(p, p_l, p_u)


def optimal_price(family: GlmFamily, theta, z, p_l: float, p_u: float):
    """Revenue-maximising price on [p_l, p_u]; vectorised over rows of ``z``.

    Raises DegenerateSensitivityError when beta >= 0.
    """
    if not p_l < p_u:
        raise ValueError("need p_l < p_u")
    _, beta = split_theta(theta)
    if not beta < 0:
        raise DegenerateSensitivityError(f"price coefficient {beta} is not negative")
    p = _price_from_utility(family.kind, utility(theta, z), beta, p_l, p_u)
    return float(p) if np.ndim(p) == 0 else p


def safe_optimal_price(family: GlmFamily, theta, z, p_l: float, p_u: float):
    """Like :func:`optimal_price` but returns ``(p_u, True)`` for beta >= 0.

    Early estimates can have a non-negative price coefficient; revenue is then
    non-decreasing in price so the upper bound is the maximiser.
    """
    try:
        return optimal_price(family, theta, z, p_l, p_u), False
    except DegenerateSensitivityError:
        n = np.shape(z)[0] if np.ndim(z) == 2 else None
        return (p_u if n is None else np.full(n, float(p_u))), True


def sample_demand(family: GlmFamily, theta, z, p, rng: np.random.Generator):
    return family.sample(expected_demand(family, theta, z, p), rng)


# -- likelihood ----------------------------------------------------------------

def _as_xy(data):
    """Accept either ``(X, y)`` arrays or a sequence of Observations."""
    if isinstance(data, tuple) and len(data) == 2:
        X, y = data
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float).ravel()
    else:
        data = list(data)
        if not data:
            raise ValueError("empty data")
        X = np.vstack([o.x for o in data])
        y = np.array([o.y for o in data], dtype=float)
    if X.shape[0] == 0:
        raise ValueError("empty data")
    if X.shape[0] != y.shape[0]:
        raise ValueError("X and y lengths differ")
    return X, y


def neg_log_likelihood(family: GlmFamily, theta, data, weights=None) -> float:
    """sum_t w_t {psi(x_t'theta) - y_t x_t'theta}; h(y) and a(phi) are dropped."""
    X, y = _as_xy(data)
    eta = X @ np.asarray(theta, dtype=float)
    terms = family.psi(eta) - y * eta
    if weights is not None:
        terms = np.asarray(weights, dtype=float) * terms
    return float(np.sum(terms))


def nll_gradient(family: GlmFamily, theta, data, weights=None) -> np.ndarray:
    X, y = _as_xy(data)
    eta = X @ np.asarray(theta, dtype=float)
    r = family.dpsi(eta) - y
    if weights is not None:
        r = np.asarray(weights, dtype=float) * r
    return X.T @ r


def kl_divergence_mc(family: GlmFamily, theta1, theta2, covariate_sampler, price_law,
                     n_samples: int, rng: np.random.Generator) -> tuple[float, float]:
    """Monte Carlo KL between two demand models, averaged over (z, p).

    ``covariate_sampler(rng, n)`` returns an (n, d-1) array and
    ``price_law(rng, n)`` an (n,) array. The inner expectation over y is
    evaluated in closed form. Returns ``(estimate, standard_error)``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    z = covariate_sampler(rng, n_samples)
    p = price_law(rng, n_samples)
    X = design_matrix(z, p)
    vals = family.conditional_kl(X @ np.asarray(theta1, float), X @ np.asarray(theta2, float))
    se = float(np.std(vals, ddof=1) / np.sqrt(n_samples)) if n_samples > 1 else float("nan")
    return float(np.mean(vals)), se
