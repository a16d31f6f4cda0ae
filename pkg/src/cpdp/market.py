"""Piecewise-stationary demand environments, episodes and regret accounting."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from .glm import LOGISTIC, GlmFamily, optimal_price, revenue, sample_demand
from .policies import CyclePolicy, ExperimentSet, PolicyEvent

D_SYNTH = 50
THETA1 = np.r_[0.0, 1, 1, 2, 2, np.zeros(44), -0.25]
THETA2 = np.r_[0.0, 1, 1, 1, 1, np.zeros(44), -0.5]
THETA2_STAR = np.r_[0.0, 1.5, 1.5, 2, 2, np.zeros(44), -0.5]
THETA3 = THETA1 / 2
THETA4 = THETA2 / 2


class UniformCovariates:
    """z = (1, u_1, ..., u_{d-2}) with u_i iid Uniform(0, 1)."""

    def __init__(self, d: int):
        self.d = d

    def __call__(self, rng: np.random.Generator, n: int) -> np.ndarray:
        z = np.empty((n, self.d - 1))
        z[:, 0] = 1.0
        z[:, 1:] = rng.random((n, self.d - 2))
        return z

    def __repr__(self):
        return f"UniformCovariates(d={self.d})"


class ReplayCovariates:
    """Replays a fixed covariate path; ignores the generator."""

    def __init__(self, z):
        self.z = np.asarray(z, dtype=float)

    def __call__(self, rng, n):
        if n > self.z.shape[0]:
            raise ValueError(f"only {self.z.shape[0]} covariate rows to replay, need {n}")
        return self.z[:n]


@dataclass
class Environment:
    family: GlmFamily
    segments: list  # [(start_period, theta)], starts strictly increasing, first = 1
    T: int
    price_bounds: tuple = (0.0, 50.0)
    experiment_set: ExperimentSet = field(default_factory=lambda: ExperimentSet(1.0, 15.0))
    covariates: object = None  # callable (rng, n) -> (n, d-1), or a list with one per segment
    name: str = ""

    def __post_init__(self):
        self.segments = [(int(s), np.asarray(th, dtype=float)) for s, th in self.segments]
        starts = [s for s, _ in self.segments]
        if not starts or starts[0] != 1:
            raise ValueError("first segment must start at period 1")
        if any(b <= a for a, b in zip(starts, starts[1:])):
            raise ValueError("segment starts must be strictly increasing")
        if starts[-1] > self.T:
            raise ValueError("segment starts beyond the horizon")
        for (_, a), (_, b) in zip(self.segments, self.segments[1:]):
            if np.array_equal(a, b):
                raise ValueError("consecutive segments must have different parameters")
        dims = {th.shape[0] for _, th in self.segments}
        if len(dims) != 1:
            raise ValueError("all segment parameters need the same dimension")
        if self.covariates is None:
            self.covariates = UniformCovariates(self.d)

    @property
    def d(self) -> int:
        return self.segments[0][1].shape[0]

    @property
    def taus(self) -> list[int]:
        return [s - 1 for s, _ in self.segments[1:]]

    @property
    def n_changes(self) -> int:
        return len(self.segments) - 1

    def segment_index(self) -> np.ndarray:
        """Segment id of every period 1..T (array of length T)."""
        starts = np.array([s for s, _ in self.segments])
        return np.searchsorted(starts, np.arange(1, self.T + 1), side="right") - 1

    def theta_matrix(self) -> np.ndarray:
        return np.vstack([th for _, th in self.segments])

    def change_sizes(self) -> list[float]:
        return [float(np.linalg.norm(b - a)) for (_, a), (_, b)
                in zip(self.segments, self.segments[1:])]

    def draw_covariates(self, rng: np.random.Generator) -> np.ndarray:
        if isinstance(self.covariates, (list, tuple)):
            if len(self.covariates) != len(self.segments):
                raise ValueError("need one covariate law per segment")
            seg = self.segment_index()
            out = np.empty((self.T, self.d - 1))
            for k, law in enumerate(self.covariates):
                rows = np.nonzero(seg == k)[0]
                out[rows] = law(rng, rows.size)
            return out
        return self.covariates(rng, self.T)

    def optimal_prices(self, Z) -> np.ndarray:
        seg = self.segment_index()
        p_l, p_u = self.price_bounds
        out = np.empty(self.T)
        for k, (_, th) in enumerate(self.segments):
            rows = seg == k
            out[rows] = optimal_price(self.family, th, Z[rows], p_l, p_u)
        return out

    def revenues(self, Z, prices) -> np.ndarray:
        seg = self.segment_index()
        out = np.empty(self.T)
        for k, (_, th) in enumerate(self.segments):
            rows = seg == k
            out[rows] = revenue(self.family, th, Z[rows], prices[rows])
        return out


@dataclass
class RegretTrace:
    regret: np.ndarray  # instantaneous conditional expected regret, length T
    prices: np.ndarray
    explore: np.ndarray  # bool, experiment period flags
    events: list[PolicyEvent]
    tau_hats: list[int]
    seed: int | None = None

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.regret)

    @property
    def total(self) -> float:
        return float(np.sum(self.regret))


def run_episode(policy: CyclePolicy, env: Environment, rng: np.random.Generator,
                seed: int | None = None) -> RegretTrace:
    """Play one horizon. ``rng`` drives covariates and demand only."""
    if policy.cfg.d != env.d or policy.cfg.T != env.T:
        raise ValueError(f"policy configured for (T={policy.cfg.T}, d={policy.cfg.d}), "
                         f"environment has (T={env.T}, d={env.d})")
    Z = env.draw_covariates(rng)
    seg = env.segment_index()
    thetas = env.theta_matrix()
    fam = env.family
    prices = np.empty(env.T)
    explore = np.zeros(env.T, dtype=bool)
    for i in range(env.T):
        z = Z[i]
        p = policy.next_price(z, i + 1)
        prices[i] = p
        explore[i] = policy.last_explore
        y = sample_demand(fam, thetas[seg[i]], z, p, rng)
        policy.observe(y)
    best = env.optimal_prices(Z)
    regret = env.revenues(Z, best) - env.revenues(Z, prices)
    return RegretTrace(regret, prices, explore, policy.events(), list(policy.tau_hats), seed)


def detection_delays(tau_hats, true_taus, T: int) -> list[int | None]:
    """Delay for each true change: first estimate in [tau_k, tau_{k+1}) minus tau_k."""
    bounds = list(true_taus) + [T + 1]
    out = []
    for k, tau in enumerate(true_taus):
        hits = [h for h in tau_hats if tau <= h < bounds[k + 1]]
        out.append(hits[0] - tau if hits else None)
    return out


# -- scenario library ----------------------------------------------------------

def _alternating(T, cuts, a, b):
    thetas = [a if i % 2 == 0 else b for i in range(len(cuts) + 1)]
    starts = [1] + [c + 1 for c in cuts]
    return list(zip(starts, thetas))


def _quarters(T, name):
    if T % 4:
        raise ValueError(f"{name} needs T divisible by 4, got {T}")
    return [T // 4, T // 2, 3 * T // 4]


def _halves(T, name):
    if T % 2:
        raise ValueError(f"{name} needs T divisible by 2, got {T}")
    return [T // 2]


SCENARIOS = ("S1", "S2", "S3", "S2star", "S3star", "S4(n)", "S4-small(n,I)",
             "A-S4", "A-S5", "A-S6")


def scenario(name: str, T: int | None = None, interval: int = 10000) -> Environment:
    """Logistic d = 50 environments with prices in [0, 50] and experiments on [1, 15].

    ``S4(n)`` alternates theta1/theta2 every ``interval`` periods with n changes,
    so T = (n + 1) * interval; ``S4-small(n,I)`` is the same with interval I.
    ``A-S4``, ``A-S5``, ``A-S6`` are S1, S2, S3 with halved parameters.
    """
    key = name.replace(" ", "")
    m = re.fullmatch(r"S4(?:-small)?\((\d+)(?:,(\d+))?\)", key)
    if m:
        n_changes = int(m.group(1))
        if m.group(2) is not None:
            interval = int(m.group(2))
        horizon = (n_changes + 1) * interval
        if T is not None and T != horizon:
            raise ValueError(f"{name} has T = {horizon}, got {T}")
        cuts = [k * interval for k in range(1, n_changes + 1)]
        segs = _alternating(horizon, cuts, THETA1, THETA2)
        return Environment(LOGISTIC, segs, horizon, name=name)
    if T is None:
        raise ValueError(f"{name} needs a horizon T")
    pairs = {
        "S1": (THETA1, None, None), "S2": (THETA1, THETA2, _halves),
        "S3": (THETA1, THETA2, _quarters), "S2star": (THETA1, THETA2_STAR, _halves),
        "S3star": (THETA1, THETA2_STAR, _quarters), "A-S4": (THETA3, None, None),
        "A-S5": (THETA3, THETA4, _halves), "A-S6": (THETA3, THETA4, _quarters),
    }
    if key not in pairs:
        raise ValueError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    a, b, cutter = pairs[key]
    cuts = [] if cutter is None else cutter(T, key)
    return Environment(LOGISTIC, _alternating(T, cuts, a, b), T, name=key)


def loglog_slope(mean_regrets, horizons) -> float:
    """OLS slope of log(mean regret) on log(horizon)."""
    r = np.asarray(mean_regrets, dtype=float)
    h = np.asarray(horizons, dtype=float)
    if r.shape != h.shape or r.size < 3:
        raise ValueError("need equal-length inputs with at least 3 points")
    if np.any(r <= 0) or np.any(h <= 0):
        raise ValueError("regrets and horizons must be positive")
    x, y = np.log(h), np.log(r)
    xc = x - x.mean()
    return float(xc @ (y - y.mean()) / (xc @ xc))


def uniform_prices(lo: float, hi: float):
    return lambda rng, n: rng.uniform(lo, hi, n)
