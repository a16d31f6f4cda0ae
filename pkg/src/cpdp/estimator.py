"""L1-penalised GLM fitting and cross-validated choice of the penalty level.

The fitted objective is

    sum_t w_t {psi(x_t'theta) - y_t x_t'theta} + lam * sqrt(sum_t w_t) * |theta|_1

so the unweighted case uses ``lam * sqrt(n)``.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from ._kernels import cd_quadratic
from .glm import GlmFamily, Kind, _as_xy

log = logging.getLogger(__name__)

ARMIJO = 1e-4


@dataclass(frozen=True)
class LassoConfig:
    lam: float = 0.0
    l1_budget: float | None = None
    max_iters: int = 5000
    tol: float = 1e-8
    solver: str = "newton"  # "newton" (proximal Newton) or "gradient"
    step_rule: str = "backtracking"
    # per-coordinate multipliers of the L1 penalty; None means all ones
    penalty_factor: tuple | None = None

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.solver not in ("newton", "gradient"):
            raise ValueError(f"unknown solver {self.solver!r}")
        if self.l1_budget is not None and not self.l1_budget > 0:
            raise ValueError("l1_budget must be positive")
        if self.penalty_factor is not None:
            object.__setattr__(self, "penalty_factor", tuple(float(f) for f in self.penalty_factor))
            if any(f < 0 for f in self.penalty_factor):
                raise ValueError("penalty factors must be nonnegative")

    def factors(self, d: int) -> np.ndarray:
        if self.penalty_factor is None:
            return np.ones(d)
        if len(self.penalty_factor) != d:
            raise ValueError(f"penalty_factor has length {len(self.penalty_factor)}, expected {d}")
        return np.asarray(self.penalty_factor)

    def with_lam(self, lam: float) -> "LassoConfig":
        return dataclasses.replace(self, lam=lam)


@dataclass
class FitResult:
    theta_hat: np.ndarray
    objective: float
    iters: int
    converged: bool
    nll: float  # unpenalised part at theta_hat
    penalty_weight: float  # lam * sqrt(sum w)
    penalty_factor: np.ndarray = None
    path: list = field(default_factory=list, repr=False)


def lambda_for(c: float, T: int, d: int) -> float:
    """Penalty level c * sqrt(log(T d))."""
    return c * math.sqrt(math.log(T * d))


def free_intercept(d: int) -> tuple:
    """Penalty factors leaving coordinate 0 (the constant covariate) unpenalised."""
    return (0.0,) + (1.0,) * (d - 1)


def soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def project_l1_ball(v, radius: float):
    """Euclidean projection onto {x : |x|_1 <= radius}."""
    v = np.asarray(v, dtype=float)
    if np.sum(np.abs(v)) <= radius:
        return v.copy()
    u = np.sort(np.abs(v))[::-1]
    css = np.cumsum(u)
    k = np.arange(1, v.size + 1)
    rho = np.nonzero(u * k > css - radius)[0][-1]
    shift = (css[rho] - radius) / (rho + 1.0)
    return soft_threshold(v, shift)


class _Problem:
    """Smooth part of the objective for fixed (family, X, y, w)."""

    def __init__(self, family: GlmFamily, X, y, w):
        self.family = family
        self.X = X
        self.y = y
        self.w = w

    def nll_eta(self, eta):
        with np.errstate(over="ignore", invalid="ignore"):
            val = float(np.dot(self.w, self.family.psi(eta) - self.y * eta))
        return val if np.isfinite(val) else math.inf

    def grad_eta(self, eta):
        return self.X.T @ (self.w * (self.family.dpsi(eta) - self.y))

    def hessian_eta(self, eta):
        if self.family.kind is Kind.GAUSSIAN:
            v = self.w
        else:
            v = self.w * self.family.ddpsi(eta)
        return self.X.T @ (self.X * v[:, None])


def _newton(prob: _Problem, pen, theta, cfg: LassoConfig):
    X = prob.X
    eta = X @ theta
    nll = prob.nll_eta(eta)
    obj = nll + pen @ np.abs(theta)
    path = [obj]
    converged = False
    it = 0
    gaussian = prob.family.kind is Kind.GAUSSIAN
    H = None
    unpenalised = not np.any(pen)
    while it < cfg.max_iters:
        it += 1
        g = prob.grad_eta(eta)
        if H is None or not gaussian:
            H = prob.hessian_eta(eta)
        new = None
        if unpenalised:
            # plain Newton step; fall back to coordinate descent if H is singular
            try:
                new = theta - cho_solve(cho_factor(H), g)
            except (np.linalg.LinAlgError, ValueError):
                new = None
            if new is not None and not np.all(np.isfinite(new)):
                new = None
        if new is None:
            cd_tol = 1e-9 * math.sqrt(max(1.0, abs(obj)))
            new = cd_quadratic(H, g, theta, pen, cd_tol, 10000)
        delta = new - theta
        decrement = float(g @ delta) + pen @ (np.abs(new) - np.abs(theta))
        scale = max(1.0, abs(obj))
        if decrement > -cfg.tol * scale * 1e-2:
            converged = True
            break
        Xd = X @ delta
        step = 1.0
        accepted = False
        for _ in range(60):
            cand = theta + step * delta
            eta_c = eta + step * Xd
            nll_c = prob.nll_eta(eta_c)
            obj_c = nll_c + pen @ np.abs(cand)
            if obj_c <= obj + ARMIJO * step * decrement:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            # no representable progress along the Newton direction
            converged = abs(decrement) <= 1e-6 * scale
            break
        rel = (obj - obj_c) / scale
        theta, eta, nll, obj = cand, eta_c, nll_c, obj_c
        path.append(obj)
        if rel < cfg.tol:
            converged = True
            break
    return theta, obj, nll, it, converged, path


def _gradient(prob: _Problem, pen, theta, cfg: LassoConfig):
    X = prob.X
    radius = cfg.l1_budget

    def prox(v, s):
        out = soft_threshold(v, s * pen)
        return out if radius is None else project_l1_ball(out, radius)

    if radius is not None:
        theta = project_l1_ball(theta, radius)
    eta = X @ theta
    nll = prob.nll_eta(eta)
    obj = nll + pen @ np.abs(theta)
    path = [obj]
    s = 1.0 / max(1e-12, float(np.sum(prob.w[:, None] * X * X)))
    converged = False
    it = 0
    while it < cfg.max_iters:
        it += 1
        g = prob.grad_eta(eta)
        s *= 2.0
        for _ in range(100):
            cand = prox(theta - s * g, s)
            diff = cand - theta
            eta_c = X @ cand
            nll_c = prob.nll_eta(eta_c)
            # majorisation check, with an Armijo margin on the proximal step
            bound = nll + g @ diff + (0.5 - ARMIJO) / s * (diff @ diff)
            if nll_c <= bound:
                break
            s *= 0.5
        obj_c = nll_c + pen @ np.abs(cand)
        rel = (obj - obj_c) / max(1.0, abs(obj))
        if obj_c <= obj:
            theta, eta, nll, obj = cand, eta_c, nll_c, obj_c
            path.append(obj)
        # stop on a small objective change and a small gradient mapping diff / s,
        # which bounds the subgradient optimality violation
        if rel < cfg.tol and np.max(np.abs(diff)) / s <= 1e-6 * (1.0 + np.max(np.abs(g))):
            converged = True
            break
    return theta, obj, nll, it, converged, path


def lasso_fit(family: GlmFamily, data, config: LassoConfig = LassoConfig(),
              weights=None, theta0=None) -> FitResult:
    """Fit the (weighted) L1-penalised GLM.

    ``data`` is ``(X, y)`` or a sequence of Observations. ``theta0`` warm-starts
    the solver. Non-convergence is reported through ``converged=False``.
    """
    X, y = _as_xy(data)
    n, d = X.shape
    if weights is None:
        w = np.ones(n)
    else:
        w = np.asarray(weights, dtype=float).ravel()
        if w.shape[0] != n:
            raise ValueError("weights length differs from data")
        if np.any(w < 0) or not np.any(w > 0):
            raise ValueError("weights must be nonnegative and not all zero")
    weight = config.lam * math.sqrt(float(w.sum()))
    factor = config.factors(d)
    pen = weight * factor
    theta = np.zeros(d) if theta0 is None else np.array(theta0, dtype=float)
    if theta.shape != (d,):
        raise ValueError(f"theta0 has shape {theta.shape}, expected ({d},)")
    prob = _Problem(family, X, y, w)
    if config.solver == "gradient" or config.l1_budget is not None:
        out = _gradient(prob, pen, theta, config)
    else:
        out = _newton(prob, pen, theta, config)
    theta, obj, nll, it, converged, path = out
    if not converged:
        log.debug("lasso fit did not converge in %d iterations", it)
    return FitResult(theta, obj, it, converged, nll, weight, factor, path)


def kkt_violation(family: GlmFamily, data, fit: FitResult, weights=None) -> float:
    """Largest violation of the L1 subgradient optimality conditions."""
    X, y = _as_xy(data)
    w = np.ones(len(y)) if weights is None else np.asarray(weights, float)
    eta = X @ fit.theta_hat
    g = X.T @ (w * (family.dpsi(eta) - y))
    pen = fit.penalty_weight * fit.penalty_factor
    active = fit.theta_hat != 0
    viol = np.where(active, np.abs(g + pen * np.sign(fit.theta_hat)),
                    np.maximum(np.abs(g) - pen, 0.0))
    return float(np.max(viol))


# -- cross-validation ----------------------------------------------------------

@dataclass
class CvResult:
    lam: float
    c: float
    lambdas: np.ndarray
    scores: np.ndarray  # mean held-out NLL per candidate
    degenerate: bool = False


def cross_validate_lambda(family: GlmFamily, pilot_data, c_grid, folds: int | None = None,
                          *, horizon: int, dim: int | None = None,
                          config: LassoConfig = LassoConfig()) -> CvResult:
    """Choose lam = c * sqrt(log(horizon * dim)) by K-fold held-out NLL.

    ``folds=None`` means leave-one-out for pilots of at most 200 points and
    10-fold otherwise; ``folds == len(pilot)`` is leave-one-out.
    """
    X, y = _as_xy(pilot_data)
    n, d = X.shape
    dim = d if dim is None else dim
    c_grid = np.asarray(c_grid, dtype=float)
    if c_grid.size == 0:
        raise ValueError("empty c_grid")
    lambdas = np.array([lambda_for(c, horizon, dim) for c in c_grid])
    if folds is None:
        folds = n if n <= 200 else 10
    if not (2 <= folds <= n):
        raise ValueError("need 2 <= folds <= len(pilot)")
    if family.kind is Kind.LOGISTIC and np.all(y == y[0]):
        warnings.warn("constant response in pilot sample; using the largest penalty")
        i = int(np.argmax(lambdas))
        return CvResult(float(lambdas[i]), float(c_grid[i]), lambdas,
                        np.full(lambdas.size, np.nan), degenerate=True)
    fold_of = np.arange(n) % folds
    totals = np.zeros(lambdas.size)
    order = np.argsort(-lambdas, kind="stable")
    for f in range(folds):
        test = fold_of == f
        Xtr, ytr, Xte, yte = X[~test], y[~test], X[test], y[test]
        theta = None
        for i in order:
            cfg = config.with_lam(float(lambdas[i]))
            fit = lasso_fit(family, (Xtr, ytr), cfg, theta0=theta)
            theta = fit.theta_hat
            eta = Xte @ theta
            with np.errstate(over="ignore"):
                totals[i] += float(np.sum(family.psi(eta) - yte * eta))
    scores = totals / n
    i = int(np.argmin(scores))
    return CvResult(float(lambdas[i]), float(c_grid[i]), lambdas, scores)
