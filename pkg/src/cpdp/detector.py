"""Online change-point test for GLM streams based on a penalised likelihood ratio.

For data indexed 1..n and a split t, with I = [1, n], I1 = [1, t], I2 = [t+1, n]:

    D(t, n) = L(th_I, I) - L(th_I1, I1) - L(th_I2, I2)
              + lam sqrt|I1| |th_I - th_I1|_1 + lam sqrt|I2| |th_I - th_I2|_1

where th_J is the Lasso fit on J and L the unpenalised negative log-likelihood.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .estimator import FitResult, LassoConfig, lasso_fit
from .glm import GlmFamily, _as_xy


class FitFailure(RuntimeError):
    def __init__(self, interval: str, lo: int, hi: int):
        super().__init__(f"Lasso fit on {interval}=[{lo}, {hi}] did not converge")
        self.interval = interval
        self.bounds = (lo, hi)


@dataclass(frozen=True)
class CptConfig:
    lam: float
    gamma: float
    m: int
    stride: int = 1

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if not self.gamma > 0:
            raise ValueError("gamma must be > 0")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")


@dataclass
class CptVerdict:
    detected: bool
    trigger_index: int | None = None
    statistic_path: list = field(default_factory=list)  # (t, D(t, n)) pairs


@dataclass
class SplitTerms:
    """Pieces of D(t, n) for one split, kept for diagnostics."""
    t: int
    n: int
    statistic: float
    nll_whole: float
    nll_left: float
    nll_right: float
    theta_whole: np.ndarray
    theta_left: np.ndarray
    theta_right: np.ndarray


def combine(lam, t, n, whole: FitResult, left: FitResult, right: FitResult) -> SplitTerms:
    tw, tl, tr = whole.theta_hat, left.theta_hat, right.theta_hat
    f = whole.penalty_factor
    stat = (whole.nll - left.nll - right.nll
            + lam * math.sqrt(t) * (f @ np.abs(tw - tl))
            + lam * math.sqrt(n - t) * (f @ np.abs(tw - tr)))
    return SplitTerms(t, n, stat, whole.nll, left.nll, right.nll, tw, tl, tr)


def _fit(family, X, y, lam, theta0, cfg, name, lo, hi):
    fit = lasso_fit(family, (X, y), cfg.with_lam(lam), theta0=theta0)
    if not fit.converged:
        raise FitFailure(name, lo, hi)
    return fit


def plrt_statistic(family: GlmFamily, data, t: int, lam: float,
                   solver: LassoConfig = LassoConfig()) -> float:
    """D(t, n) for a single split, computed from three fresh fits."""
    return plrt_terms(family, data, t, lam, solver).statistic


def plrt_terms(family: GlmFamily, data, t: int, lam: float,
               solver: LassoConfig = LassoConfig()) -> SplitTerms:
    X, y = _as_xy(data)
    n = len(y)
    if not 1 <= t <= n - 1:
        raise ValueError(f"split {t} outside [1, {n - 1}]")
    whole = _fit(family, X, y, lam, None, solver, "I", 1, n)
    left = _fit(family, X[:t], y[:t], lam, whole.theta_hat, solver, "I1", 1, t)
    right = _fit(family, X[t:], y[t:], lam, whole.theta_hat, solver, "I2", t + 1, n)
    return combine(lam, t, n, whole, left, right)


class CptScanner:
    """Stateful CPT scan for a growing sample.

    Fits on prefixes [1, t] do not change when data is appended, so they are
    cached; fits on suffixes and on the whole sample are warm-started from the
    previous scan. The cache is dropped automatically if the prefix of the
    sample handed to :meth:`scan` differs from what was seen before.
    """

    def __init__(self, family: GlmFamily, config: CptConfig,
                 solver: LassoConfig = LassoConfig()):
        self.family = family
        self.config = config
        self.solver = solver
        self.reset()

    def reset(self):
        self._X = None
        self._y = None
        self._left: dict[int, FitResult] = {}
        self._right_theta: dict[int, np.ndarray] = {}
        self._whole_theta = None
        self.last_terms: list[SplitTerms] = []

    def _check_prefix(self, X, y):
        if self._X is None:
            return
        k = self._X.shape[0]
        if (X.shape[0] < k or X.shape[1] != self._X.shape[1]
                or not np.array_equal(X[:k], self._X) or not np.array_equal(y[:k], self._y)):
            self.reset()

    def splits(self, n: int) -> range:
        m, stride = self.config.m, self.config.stride
        return range(m, n - m + 1, stride)

    def scan(self, data) -> CptVerdict:
        X, y = _as_xy(data)
        n = len(y)
        cfg = self.config
        self._check_prefix(X, y)
        self._X, self._y = X.copy(), y.copy()
        self.last_terms = []
        if n < 2 * cfg.m:
            return CptVerdict(False)
        lam = cfg.lam
        whole = _fit(self.family, X, y, lam, self._whole_theta, self.solver, "I", 1, n)
        self._whole_theta = whole.theta_hat
        verdict = CptVerdict(False)
        for t in self.splits(n):
            left = self._left.get(t)
            if left is None:
                left = _fit(self.family, X[:t], y[:t], lam, whole.theta_hat, self.solver,
                            "I1", 1, t)
                self._left[t] = left
            warm = self._right_theta.get(t, whole.theta_hat)
            right = _fit(self.family, X[t:], y[t:], lam, warm, self.solver, "I2", t + 1, n)
            self._right_theta[t] = right.theta_hat
            terms = combine(lam, t, n, whole, left, right)
            self.last_terms.append(terms)
            verdict.statistic_path.append((t, terms.statistic))
            if terms.statistic > cfg.gamma:
                verdict.detected = True
                verdict.trigger_index = t
                break
        return verdict


def cpt_scan(family: GlmFamily, data, config: CptConfig,
             solver: LassoConfig = LassoConfig()) -> CptVerdict:
    """Scan t = m, m+stride, ..., n-m and stop at the first D(t, n) > gamma."""
    return CptScanner(family, config, solver).scan(data)


def default_m(T: int, d: int) -> int:
    """ceil(log(T d)^1.1), the practical choice for both m and gamma."""
    return math.ceil(math.log(T * d) ** 1.1)
