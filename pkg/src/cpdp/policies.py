"""Pricing policies: CPDP and the Naive/SW/DF/BK/OPT baselines.

All policies share one interface: ``next_price(z, t)`` is called at the start
of period ``t`` (1-based) with the period's covariates, then ``observe(y)``
with the realised demand. Randomness for price experiments comes only from
the generator handed to the constructor.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .detector import CptConfig, CptScanner, FitFailure, default_m
from .estimator import LassoConfig, free_intercept, lambda_for, lasso_fit
from .glm import LOGISTIC, GlmFamily, safe_optimal_price

log = logging.getLogger(__name__)

POLICY_NAMES = ("CPDP", "OPT-DP", "Naive-DP", "SW-DP", "DF-DP", "BK-DP")


class ExperimentSet:
    """Prices used for experiments: an interval ``(lo, hi)`` or a finite list."""

    def __init__(self, lo: float | None = None, hi: float | None = None,
                 prices: Sequence[float] | None = None):
        if prices is not None:
            self.prices = np.unique(np.asarray(prices, dtype=float))
            if self.prices.size < 2:
                raise ValueError("a finite experiment set needs at least two prices")
            self.lo, self.hi = float(self.prices[0]), float(self.prices[-1])
        else:
            if lo is None or hi is None or not lo < hi:
                raise ValueError("interval experiment set needs lo < hi")
            self.prices = None
            self.lo, self.hi = float(lo), float(hi)

    def sample(self, rng: np.random.Generator) -> float:
        if self.prices is None:
            return float(rng.uniform(self.lo, self.hi))
        return float(self.prices[rng.integers(self.prices.size)])

    def sample_many(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.prices is None:
            return rng.uniform(self.lo, self.hi, n)
        return self.prices[rng.integers(self.prices.size, size=n)]

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def __repr__(self):
        if self.prices is None:
            return f"ExperimentSet([{self.lo}, {self.hi}])"
        return f"ExperimentSet({self.prices.tolist()})"


@dataclass
class PolicyConfig:
    T: int
    d: int
    m: int
    gamma: float
    lam: float
    experiment_set: ExperimentSet
    price_bounds: tuple[float, float]
    family: GlmFamily = LOGISTIC
    eta_sw: float = math.inf  # window, in cycles
    rho_df: float = 1.0
    true_taus: tuple = ()
    solver: LassoConfig = field(default_factory=LassoConfig)

    def __post_init__(self):
        p_l, p_u = self.price_bounds
        if not p_l < p_u:
            raise ValueError("price bounds need p_l < p_u")
        if self.experiment_set.lo < p_l or self.experiment_set.hi > p_u:
            raise ValueError("experiment set must lie inside the price bounds")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if not 0 < self.rho_df <= 1:
            raise ValueError("rho_df must be in (0, 1]")
        if not self.eta_sw >= 1:
            raise ValueError("eta_sw must be >= 1")

    @classmethod
    def practical(cls, T: int, d: int, experiment_set: ExperimentSet,
                  price_bounds: tuple[float, float], c_lambda: float = 0.2,
                  m: int | None = None, gamma: float | None = None, **kw) -> "PolicyConfig":
        """m = gamma = ceil(log(Td)^1.1) and lam = c_lambda sqrt(log(Td)) unless given.

        The intercept (first coordinate) is left unpenalised unless a solver
        config is passed in.
        """
        default = default_m(T, d)
        lam = kw.pop("lam", None)
        kw.setdefault("solver", LassoConfig(penalty_factor=free_intercept(d)))
        return cls(T=T, d=d, m=default if m is None else m,
                   gamma=float(default if gamma is None else gamma),
                   lam=lambda_for(c_lambda, T, d) if lam is None else lam,
                   experiment_set=experiment_set, price_bounds=price_bounds, **kw)


@dataclass
class PolicyEvent:
    period: int
    kind: str  # "detection", "restart", "refit", "fit_failure", "degenerate_price"
    k: int
    tau_hat: int | None = None
    info: str = ""


class CyclePolicy:
    """Exploration blocks of length m followed by exploitation blocks of n_k periods.

    Subclasses decide whether to test for a change at the end of each
    exploration block, which experiment data to keep, and how to weight it.
    """

    name = "Naive-DP"

    def __init__(self, config: PolicyConfig, rng: np.random.Generator):
        self.cfg = config
        self.rng = rng
        self.k = 0
        self.tau_hats: list[int] = []
        self.theta_hat: np.ndarray | None = None
        self._events: list[PolicyEvent] = []
        self._X: list[np.ndarray] = []
        self._y: list[float] = []
        self._t: list[int] = []
        self._pending = None
        self.last_explore = False
        self.explore_count = 0
        self.exploit_count = 0
        self._start_cycle()

    # -- bookkeeping -----------------------------------------------------------
    def exploit_length(self, k: int | None = None) -> int:
        k = self.k if k is None else k
        return math.ceil(math.sqrt(self.cfg.T / (k + 1)))

    def _start_cycle(self):
        self.phase = "explore"
        self.phase_pos = 0

    def events(self) -> list[PolicyEvent]:
        return list(self._events)

    @property
    def buffer_size(self) -> int:
        return len(self._y)

    def buffer(self):
        if not self._y:
            return np.empty((0, self.cfg.d)), np.empty(0)
        return np.vstack(self._X), np.asarray(self._y, dtype=float)

    def _clear_buffer(self):
        self._X.clear()
        self._y.clear()
        self._t.clear()

    def _append(self, x, y, t):
        self._X.append(x)
        self._y.append(float(y))
        self._t.append(t)

    # -- interface -------------------------------------------------------------
    def before_period(self, t: int):
        pass

    def is_experiment(self, t: int) -> bool:
        return self.phase == "explore"

    def next_price(self, z, t: int) -> float:
        self.before_period(t)
        z = np.asarray(z, dtype=float)
        if self.is_experiment(t):
            p = self.cfg.experiment_set.sample(self.rng)
            self.last_explore = True
            self.explore_count += 1
        else:
            p = self._exploit_price(z, t)
            self.last_explore = False
            self.exploit_count += 1
        self._pending = (z, p, t)
        return p

    def _exploit_price(self, z, t):
        if self.theta_hat is None:
            return self.cfg.experiment_set.midpoint
        p_l, p_u = self.cfg.price_bounds
        p, degenerate = safe_optimal_price(self.cfg.family, self.theta_hat, z, p_l, p_u)
        if degenerate:
            self._events.append(PolicyEvent(t, "degenerate_price", self.k))
        return float(p)

    def observe(self, y: float):
        if self._pending is None:
            raise RuntimeError("observe() called before next_price()")
        z, p, t = self._pending
        self._pending = None
        if self.last_explore:
            self._append(np.append(z, p), y, t)
            self._after_experiment(t)
        else:
            self.phase_pos += 1
            if self.phase_pos >= self._exploit_len:
                self._start_cycle()

    def _after_experiment(self, t):
        self.phase_pos += 1
        if self.phase_pos < self.cfg.m:
            return
        if self.detect(t):
            self.restart(t, t)
            return
        self.refit(t)
        self.phase = "exploit"
        self.phase_pos = 0
        self._exploit_len = self.exploit_length()

    def restart(self, t: int, tau_hat: int):
        self.k += 1
        self.tau_hats.append(tau_hat)
        self._events.append(PolicyEvent(t, "restart", self.k, tau_hat))
        self._clear_buffer()
        self._start_cycle()

    # -- hooks -----------------------------------------------------------------
    def detect(self, t: int) -> bool:
        return False

    def fit_weights(self, t: int):
        return None

    def refit(self, t: int):
        X, y = self.buffer()
        cfg = self.cfg
        solver = cfg.solver.with_lam(cfg.lam)
        fit = lasso_fit(cfg.family, (X, y), solver, weights=self.fit_weights(t),
                        theta0=self.theta_hat)
        if fit.converged:
            self.theta_hat = fit.theta_hat
            self._events.append(PolicyEvent(t, "refit", self.k, info=f"n={len(y)} iters={fit.iters}"))
        else:
            self._events.append(PolicyEvent(t, "fit_failure", self.k, info=f"n={len(y)}"))


class NaiveDP(CyclePolicy):
    name = "Naive-DP"


class CPDP(CyclePolicy):
    """Cycles with a change-point test after every exploration block; restart on detection."""

    name = "CPDP"

    def __init__(self, config: PolicyConfig, rng: np.random.Generator):
        self.scanner = CptScanner(config.family,
                                  CptConfig(config.lam, config.gamma, config.m, stride=config.m),
                                  config.solver)
        super().__init__(config, rng)

    def detect(self, t):
        try:
            verdict = self.scanner.scan(self.buffer())
        except FitFailure as exc:
            self._events.append(PolicyEvent(t, "fit_failure", self.k, info=str(exc)))
            return False
        if verdict.detected:
            self._events.append(PolicyEvent(t, "detection", self.k + 1, t,
                                            info=f"split={verdict.trigger_index}"))
        return verdict.detected

    def restart(self, t, tau_hat):
        super().restart(t, tau_hat)
        self.scanner.reset()


class SlidingWindowDP(CyclePolicy):
    """Keeps only the most recent ``eta_sw`` exploration blocks."""

    name = "SW-DP"

    def _append(self, x, y, t):
        super()._append(x, y, t)
        if math.isfinite(self.cfg.eta_sw):
            keep = int(self.cfg.eta_sw) * self.cfg.m
            if len(self._y) > keep:
                del self._X[:-keep], self._y[:-keep], self._t[:-keep]


class DiscountedDP(CyclePolicy):
    """Weights each experiment by rho_df ** (periods elapsed since it was observed)."""

    name = "DF-DP"

    def fit_weights(self, t):
        elapsed = t - np.asarray(self._t, dtype=float)
        return self.cfg.rho_df ** elapsed


class OracleDP(CyclePolicy):
    """CPDP with the detector replaced by the true change-point locations."""

    name = "OPT-DP"

    def __init__(self, config: PolicyConfig, rng: np.random.Generator):
        self._restart_at = {int(tau) + 1: int(tau) for tau in config.true_taus}
        super().__init__(config, rng)

    def before_period(self, t):
        tau = self._restart_at.get(t)
        if tau is not None:
            self.restart(t, tau)


class BanKeskinDP(CyclePolicy):
    """Experiments on the union of blocks [L^2, L^2 + m - 1], L = 1, 2, ...

    Every other period is priced greedily from a fit on all experiments so far.
    """

    name = "BK-DP"

    def __init__(self, config: PolicyConfig, rng: np.random.Generator):
        super().__init__(config, rng)
        self._schedule = bk_schedule(config.T, config.m)

    def is_experiment(self, t):
        return t in self._schedule

    def observe(self, y):
        if self._pending is None:
            raise RuntimeError("observe() called before next_price()")
        z, p, t = self._pending
        self._pending = None
        if self.last_explore:
            self._append(np.append(z, p), y, t)
            if t + 1 not in self._schedule:
                self.refit(t)


def bk_schedule(T: int, m: int) -> set[int]:
    periods = set()
    L = 1
    while L * L <= T:
        periods.update(range(L * L, min(L * L + m - 1, T) + 1))
        L += 1
    return periods


_REGISTRY = {
    "CPDP": CPDP,
    "OPT-DP": OracleDP,
    "Naive-DP": NaiveDP,
    "SW-DP": SlidingWindowDP,
    "DF-DP": DiscountedDP,
    "BK-DP": BanKeskinDP,
}


def make_policy(name: str, config: PolicyConfig, rng: np.random.Generator) -> CyclePolicy:
    try:
        cls = _REGISTRY[name]
    except KeyError:
        raise ValueError(f"unknown policy {name!r}; choose from {', '.join(POLICY_NAMES)}") from None
    return cls(config, rng)
