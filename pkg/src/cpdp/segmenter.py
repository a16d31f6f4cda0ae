"""Offline change-point estimation by BIC-penalised likelihood, and data replay.

For a segmentation 0 = tau_0 < tau_1 < ... < tau_K < tau_{K+1} = T the
criterion is

    F(tau) = 2 * sum_k NLL_k + K * p * log(T)

where NLL_k is the minimised negative log-likelihood on (tau_k, tau_{k+1}] and
p the number of regression coefficients (intercept and price included). For
the logistic family NLL is the exact negative log-likelihood; for Gaussian and
Poisson data it differs from it by a constant that does not depend on tau.
The minimiser is found exactly by dynamic programming over a table of segment
costs.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .estimator import LassoConfig, lasso_fit
from .glm import LOGISTIC, GlmFamily, _as_xy
from .market import Environment, ReplayCovariates
from .policies import ExperimentSet


@dataclass
class SegmentationResult:
    tau_hat: np.ndarray  # last period of each segment but the final one
    thetas: list  # one MLE per segment
    objective: float  # F(tau_hat)
    K_path: dict = field(default_factory=dict)  # best F for each number of changes

    @property
    def K(self) -> int:
        return len(self.tau_hat)

    def bounds(self, T: int) -> list[tuple[int, int]]:
        """1-based inclusive (start, end) of every segment."""
        cuts = [0, *map(int, self.tau_hat), T]
        return [(a + 1, b) for a, b in zip(cuts, cuts[1:])]


class SegmentCosts:
    """Lazy cache of 2 * NLL for segments (i, j] of a fixed sample."""

    def __init__(self, family: GlmFamily, X, y, max_iters: int = 200):
        self.family = family
        self.X = X
        self.y = y
        self.cfg = LassoConfig(lam=0.0, max_iters=max_iters, tol=1e-10)
        self._cost: dict[tuple[int, int], float] = {}
        self._theta: dict[tuple[int, int], np.ndarray] = {}

    def fit(self, i: int, j: int, theta0=None):
        fit = lasso_fit(self.family, (self.X[i:j], self.y[i:j]), self.cfg, theta0=theta0)
        if not fit.converged or not np.isfinite(fit.nll):
            return math.inf, None
        return 2.0 * fit.nll / self.family.scale, fit.theta_hat

    def cost(self, i: int, j: int, theta0=None) -> float:
        key = (i, j)
        if key not in self._cost:
            c, th = self.fit(i, j, theta0)
            self._cost[key] = c
            self._theta[key] = th
        return self._cost[key]

    def theta(self, i: int, j: int):
        self.cost(i, j)
        return self._theta[(i, j)]

    def __len__(self):
        return len(self._cost)


def candidate_cuts(T: int, min_seg: int, step: int = 1) -> list[int]:
    """Admissible change-points: multiples of ``step`` leaving min_seg on each side."""
    first = max(min_seg, step * math.ceil(min_seg / step))
    return list(range(first, T - min_seg + 1, step))


def bic_segment(family: GlmFamily, data, min_seg: int | None = None, max_K: int = 10,
                step: int = 1, penalty_scale: float = 1.0,
                costs: SegmentCosts | None = None) -> SegmentationResult:
    """Exact minimiser of F over segmentations with segments of at least ``min_seg``.

    ``step > 1`` restricts change-points to multiples of ``step``, which makes
    long series tractable; the minimisation is exact over that grid.
    A segment whose fit fails costs +inf.
    """
    X, y = _as_xy(data)
    T, p = X.shape
    if min_seg is None:
        min_seg = max(p + 2, 30)
    if min_seg < p + 2:
        raise ValueError(f"min_seg must be at least p + 2 = {p + 2}")
    if T < 2 * min_seg and max_K > 0:
        max_K = 0
    if T < min_seg:
        raise ValueError(f"need at least min_seg = {min_seg} observations, got {T}")
    if max_K < 0 or step < 1:
        raise ValueError("need max_K >= 0 and step >= 1")
    costs = costs if costs is not None else SegmentCosts(family, X, y)
    nodes = [0] + candidate_cuts(T, min_seg, step) + [T]
    n = len(nodes)
    max_K = min(max_K, n - 2)

    def cell(a, b):
        # segment cost on (nodes[a], nodes[b]], warm-started from (nodes[a], nodes[b - 1]]
        if nodes[b] - nodes[a] < min_seg:
            return math.inf
        warm = costs._theta.get((nodes[a], nodes[b - 1])) if b - 1 > a else None
        return costs.cost(nodes[a], nodes[b], warm)

    pen = penalty_scale * p * math.log(T)
    # best[k, b]: cheapest way to cover (0, nodes[b]] with k + 1 segments; only the
    # final node is needed for the last layer, so its cells are fitted lazily
    best = np.full((max_K + 1, n), math.inf)
    arg = np.zeros((max_K + 1, n), dtype=int)
    for b in (range(1, n) if max_K > 0 else [n - 1]):
        best[0, b] = cell(0, b)
    for k in range(1, max_K + 1):
        targets = [n - 1] if k == max_K else range(1, n)
        for b in targets:
            vals = np.array([best[k - 1, a] + cell(a, b) if math.isfinite(best[k - 1, a])
                             else math.inf for a in range(b)])
            a = int(np.argmin(vals))
            best[k, b] = vals[a]
            arg[k, b] = a
    totals = {k: float(best[k, n - 1] + k * pen) for k in range(max_K + 1)}
    K = min(totals, key=lambda k: (totals[k], k))
    if not math.isfinite(totals[K]):
        raise RuntimeError("no segmentation with finite cost")
    idx = [n - 1]
    for k in range(K, 0, -1):
        idx.append(arg[k, idx[-1]])
    idx.append(0)
    idx = idx[::-1]
    cuts = [nodes[i] for i in idx]
    thetas = [costs.theta(a, b) for a, b in zip(cuts, cuts[1:])]
    return SegmentationResult(np.array(cuts[1:-1], dtype=int), thetas, totals[K], totals)


def segmentation_objective(family: GlmFamily, data, tau, penalty_scale: float = 1.0,
                           costs: SegmentCosts | None = None) -> float:
    """F(tau) for an explicit list of change-points."""
    X, y = _as_xy(data)
    T, p = X.shape
    costs = costs if costs is not None else SegmentCosts(family, X, y)
    cuts = [0, *map(int, tau), T]
    total = sum(costs.cost(a, b) for a, b in zip(cuts, cuts[1:]))
    return total + penalty_scale * len(tau) * p * math.log(T)


# -- real-data style replay ----------------------------------------------------

@dataclass
class ReplayData:
    """One row per customer: response, price and named covariates (no intercept)."""
    y: np.ndarray
    price: np.ndarray
    Z: np.ndarray
    names: list[str]

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        self.price = np.asarray(self.price, dtype=float)
        self.Z = np.asarray(self.Z, dtype=float).reshape(len(self.y), -1)
        if not (len(self.y) == len(self.price) == self.Z.shape[0]):
            raise ValueError("y, price and covariates must have the same number of rows")
        if self.Z.shape[1] != len(self.names):
            raise ValueError("one name per covariate column is required")

    def __len__(self):
        return len(self.y)

    def columns(self, selected=None) -> list[int]:
        if selected is None:
            return list(range(len(self.names)))
        missing = [s for s in selected if s not in self.names]
        if missing:
            raise ValueError(f"unknown covariates: {', '.join(missing)}")
        return [self.names.index(s) for s in selected]

    def design(self, selected=None) -> np.ndarray:
        """(1, z*, p) rows for the selected covariates."""
        cols = self.columns(selected)
        return np.column_stack([np.ones(len(self)), self.Z[:, cols], self.price])


def read_replay_csv(path, response: str = "apply", price: str = "price") -> ReplayData:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        for col in (response, price):
            if col not in header:
                raise ValueError(f"{path}: missing required column {col!r}")
        rows = [r for r in reader if r]
    if not rows:
        raise ValueError(f"{path}: no data rows")
    try:
        arr = np.array(rows, dtype=float)
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric entry ({exc})") from None
    if arr.shape[1] != len(header):
        raise ValueError(f"{path}: ragged rows")
    iy, ip = header.index(response), header.index(price)
    cov = [i for i in range(len(header)) if i not in (iy, ip)]
    y = arr[:, iy]
    if not np.all((y == 0) | (y == 1)):
        raise ValueError(f"{path}: {response!r} must be 0/1")
    return ReplayData(y, arr[:, ip], arr[:, cov], [header[i] for i in cov])


def write_replay_csv(path, data: ReplayData, response: str = "apply", price: str = "price"):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([response, price, *data.names])
        for yi, pi, zi in zip(data.y, data.price, data.Z):
            w.writerow([repr(float(yi)) if yi % 1 else int(yi), repr(float(pi)),
                        *(repr(float(v)) for v in zi)])


def replay_environment(data: ReplayData, segmentation: SegmentationResult,
                       family: GlmFamily = LOGISTIC, selected=None,
                       price_bounds=(0.0, 14.0), experiment_set=(0.2, 6.0),
                       name: str = "replay", standardize: bool = True) -> Environment:
    """Environment whose truth is the per-segment fit and whose covariates replay ``data``.

    Segment coefficients come from ``segmentation.thetas`` (fitted on the
    selected covariates); the remaining covariates get zero coefficients.
    With ``standardize`` the replayed covariates are centred and scaled to unit
    variance and the coefficients rescaled to match, so demand, optimal prices
    and regret are unchanged while the policies' L1 penalty sees comparable
    scales.
    """
    cols = data.columns(selected)
    q = len(data.names)
    T = len(data)
    segs = []
    for (start, _), th in zip(segmentation.bounds(T), segmentation.thetas):
        th = np.asarray(th, dtype=float)
        if th.shape[0] != len(cols) + 2:
            raise ValueError("segment coefficients do not match the selected covariates")
        full = np.zeros(q + 2)
        full[0] = th[0]
        full[1 + np.asarray(cols, dtype=int)] = th[1:-1]
        full[-1] = th[-1]
        segs.append((start, full))
    Z = data.Z
    if standardize:
        mu, sd = Z.mean(axis=0), Z.std(axis=0)
        sd = np.where(sd > 0, sd, 1.0)
        Z = (Z - mu) / sd
        segs = [(start, np.r_[th[0] + th[1:-1] @ mu, th[1:-1] * sd, th[-1]])
                for start, th in segs]
    Z = np.column_stack([np.ones(T), Z])
    return Environment(family, segs, T, price_bounds=tuple(price_bounds),
                       experiment_set=ExperimentSet(*experiment_set),
                       covariates=ReplayCovariates(Z), name=name)


# -- auto-loan style surrogate -------------------------------------------------

LOAN_FEATURES = ("fico", "comp_rate", "amount", "prime", "term")
# intercept, fico, competitor rate, amount, prime rate, term, price (per segment)
LOAN_COEFS = np.array([
    [-7.63, 3.20e-3, 1.83, -0.11, -2.00, 1.47e-2, -0.42],
    [-12.29, 0.35e-3, 2.69, -0.07, -0.63, 1.43e-2, -0.60],
    [-12.81, -7.24e-3, 4.77, -0.02, -1.92, 2.89e-2, -1.27],
    [-7.66, -2.37e-3, 2.77, -0.09, -1.02, 0.57e-2, -0.88],
])
LOAN_CUTS = (12916, 24986, 37054)
LOAN_T = 50000
N_NULL = 9


def loan_price(monthly_payment, term, amount, rate: float = 0.0012):
    """Net present value of the payments at the monthly ``rate`` minus the amount."""
    term = np.asarray(term, dtype=float)
    annuity = (1.0 - (1.0 + rate) ** -term) / rate
    return np.asarray(monthly_payment) * annuity - np.asarray(amount)


def monthly_payment(amount, term, monthly_rate):
    r = np.asarray(monthly_rate, dtype=float)
    return np.asarray(amount) * r / (1.0 - (1.0 + r) ** -np.asarray(term, dtype=float))


def loan_surrogate(T: int = LOAN_T, rng: np.random.Generator | None = None):
    """Synthetic applications driven by the four-segment loan demand model.

    Returns ``(data, segments)`` with ``segments`` the true ``[(start, theta)]``
    on the selected covariates (1, fico, comp_rate, amount, prime, term, price).
    Change-points sit at the same relative positions as in the 50000-row
    original. Covariate laws are stand-ins chosen to give plausible ranges.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    cuts = [round(T * c / LOAN_T) for c in LOAN_CUTS]
    fico = rng.uniform(600, 850, T)
    comp = rng.uniform(3.5, 6.5, T)
    amount = rng.uniform(10, 40, T)
    prime = rng.uniform(1.0, 2.0, T)
    term = rng.choice([36.0, 48.0, 60.0, 72.0], T)
    apr = rng.uniform(0.04, 0.10, T)
    mp = monthly_payment(amount, term, apr / 12)
    price = loan_price(mp, term, amount)
    nulls = rng.standard_normal((T, N_NULL))
    Z = np.column_stack([fico, comp, amount, prime, term, nulls])
    names = list(LOAN_FEATURES) + [f"null{i + 1}" for i in range(N_NULL)]
    X = np.column_stack([np.ones(T), Z[:, :5], price])
    starts = [1] + [c + 1 for c in cuts]
    seg = np.searchsorted(np.array(starts), np.arange(1, T + 1), side="right") - 1
    eta = np.einsum("ij,ij->i", X, LOAN_COEFS[seg])
    y = (rng.random(T) < LOGISTIC.dpsi(eta)).astype(float)
    return ReplayData(y, price, Z, names), list(zip(starts, LOAN_COEFS))
