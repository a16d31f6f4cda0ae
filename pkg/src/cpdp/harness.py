"""Replicated experiments: seeding, pilot cross-validation, and CSV output."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .estimator import LassoConfig, cross_validate_lambda, free_intercept, lambda_for
from .market import Environment, RegretTrace, detection_delays, run_episode
from .policies import POLICY_NAMES, PolicyConfig, make_policy

SCHEMA = {"regret_curve": 1, "summary": 1, "events": 1, "cv": 1, "slopes": 1}
CURVE_HEADER = ["run_id", "policy", "T", "t", "cum_regret"]
SUMMARY_HEADER = ["policy", "T", "mean_regret", "sd", "mean_detected_K", "mean_delay_tau1"]
EVENTS_HEADER = ["run_id", "policy", "T", "k", "tau_hat", "true_tau"]
CV_HEADER = ["run_id", "T", "c", "lambda_cv", "degenerate"]
MAX_CURVE_ROWS = 2000
DEFAULT_C_GRID = tuple(float(c) for c in np.round(np.geomspace(0.05, 2.0, 17), 6))


def stable_seed(*parts) -> int:
    """64-bit seed from blake2b over the '|'-joined parts."""
    key = "|".join(str(p) for p in parts).encode()
    return int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")


def run_rngs(base_seed: int, policy: str, T: int, run_id: int):
    """(policy stream, environment stream) for one run.

    The environment stream does not depend on the policy, so every policy in
    a replication faces the same covariates and demand noise.
    """
    pol = np.random.default_rng(stable_seed(base_seed, policy, T, run_id))
    env = np.random.default_rng(stable_seed(base_seed, "environment", T, run_id))
    return pol, env


@dataclass
class Knobs:
    """Policy tuning shared by every policy of an experiment."""
    lambda_c: float = 0.2
    lambda_cv: bool = False
    m: int | None = None
    gamma: float | None = None
    eta_sw: float = 8.0
    rho_df: float = 0.99
    cv_grid: tuple = DEFAULT_C_GRID
    cv_folds: int | None = None


@dataclass
class RunResult:
    run_id: int
    policy: str
    T: int
    total: float
    curve: list  # (t, cum_regret)
    tau_hats: list
    true_taus: list
    delays: list
    lam: float


def pilot_sample(env: Environment, n: int, rng: np.random.Generator):
    """n price experiments under the first segment's parameters."""
    Z = env.draw_covariates(rng)[:n]
    p = env.experiment_set.sample_many(rng, n)
    X = np.column_stack([Z, p])
    theta = env.segments[0][1]
    y = env.family.sample(env.family.dpsi(X @ theta), rng)
    return X, y


def choose_lambda(env: Environment, knobs: Knobs, base_seed: int, run_id: int):
    """Fixed lambda, or the CV choice on a sqrt(T) pilot (shared by all policies of a run)."""
    if not knobs.lambda_cv:
        return lambda_for(knobs.lambda_c, env.T, env.d), None
    rng = np.random.default_rng(stable_seed(base_seed, "pilot", env.T, run_id))
    pilot = pilot_sample(env, math.ceil(math.sqrt(env.T)), rng)
    cv = cross_validate_lambda(env.family, pilot, knobs.cv_grid, knobs.cv_folds, horizon=env.T,
                               config=LassoConfig(penalty_factor=free_intercept(env.d)))
    return cv.lam, cv


def policy_config(env: Environment, knobs: Knobs, lam: float) -> PolicyConfig:
    return PolicyConfig.practical(env.T, env.d, env.experiment_set, env.price_bounds,
                                  m=knobs.m, gamma=knobs.gamma, lam=lam, family=env.family,
                                  eta_sw=knobs.eta_sw, rho_df=knobs.rho_df,
                                  true_taus=tuple(env.taus))


def curve_points(T: int, limit: int = MAX_CURVE_ROWS) -> np.ndarray:
    """1-based periods at which the cumulative regret curve is reported (always ends at T)."""
    if T <= limit:
        return np.arange(1, T + 1)
    return np.unique(np.round(np.linspace(1, T, limit)).astype(int))


def run_one(env: Environment, policy: str, knobs: Knobs, base_seed: int, run_id: int,
            lam: float | None = None) -> RunResult:
    if lam is None:
        lam, _ = choose_lambda(env, knobs, base_seed, run_id)
    pol_rng, env_rng = run_rngs(base_seed, policy, env.T, run_id)
    pol = make_policy(policy, policy_config(env, knobs, lam), pol_rng)
    trace: RegretTrace = run_episode(pol, env, env_rng)
    cum = trace.cumulative
    ts = curve_points(env.T)
    curve = list(zip(ts.tolist(), cum[ts - 1].tolist()))
    taus = env.taus
    return RunResult(run_id, policy, env.T, trace.total, curve, list(trace.tau_hats), taus,
                     detection_delays(trace.tau_hats, taus, env.T), lam)


def _job(args):
    env, policy, knobs, base_seed, run_id, lam = args
    return run_one(env, policy, knobs, base_seed, run_id, lam)


def run_experiment(envs: list[Environment], policies, reps: int, knobs: Knobs,
                   base_seed: int = 0, workers: int = 1) -> list[RunResult]:
    """Every (environment, replication, policy) triple; output order does not depend on workers."""
    if not policies:
        raise ValueError("empty policy list")
    bad = [p for p in policies if p not in POLICY_NAMES]
    if bad:
        raise ValueError(f"unknown policies {bad}; choose from {', '.join(POLICY_NAMES)}")
    if reps < 1:
        raise ValueError("reps must be >= 1")
    jobs = []
    for env in envs:
        for r in range(reps):
            lam, _ = choose_lambda(env, knobs, base_seed, r)
            jobs.extend((env, p, knobs, base_seed, r, lam) for p in policies)
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_job, jobs, chunksize=1))
    else:
        results = [_job(j) for j in jobs]
    return results


def summarise(results: list[RunResult]) -> list[dict]:
    rows = []
    keys = []
    for r in results:
        if (r.policy, r.T) not in keys:
            keys.append((r.policy, r.T))
    for policy, T in keys:
        rs = [r for r in results if r.policy == policy and r.T == T]
        totals = np.array([r.total for r in rs])
        sd = float(totals.std(ddof=1)) if len(rs) > 1 else 0.0
        delays = [r.delays[0] for r in rs if r.delays and r.delays[0] is not None]
        rows.append({
            "policy": policy, "T": T, "mean_regret": float(totals.mean()), "sd": sd,
            "mean_detected_K": float(np.mean([len(r.tau_hats) for r in rs])),
            "mean_delay_tau1": float(np.mean(delays)) if delays else None,
        })
    return rows


# -- output ----------------------------------------------------------------------

def fmt(v) -> str:
    """Shortest round-trip text for numbers; empty for missing."""
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if v.is_integer() and abs(v) < 1e16:
            return str(int(v))
        return repr(v)
    return str(v)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            if isinstance(row, dict):
                row = [row[h] for h in header]
            w.writerow([fmt(v) for v in row])


def write_results(out_dir, results: list[RunResult], meta: dict) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    paths = {k: os.path.join(out_dir, f"{k}.csv") for k in ("regret_curve", "summary", "events")}
    write_csv(paths["regret_curve"], CURVE_HEADER,
              ([r.run_id, r.policy, r.T, t, c] for r in results for t, c in r.curve))
    write_csv(paths["summary"], SUMMARY_HEADER, summarise(results))
    events = []
    for r in results:
        for k, tau_hat in enumerate(r.tau_hats, start=1):
            prior = [tau for tau in r.true_taus if tau <= tau_hat]
            events.append([r.run_id, r.policy, r.T, k, tau_hat, prior[-1] if prior else None])
    write_csv(paths["events"], EVENTS_HEADER, events)
    write_manifest(out_dir, meta, ["regret_curve", "summary", "events"])
    return paths


def write_manifest(out_dir, meta: dict, tables):
    manifest = {"package_version": __version__,
                "schema": {t: SCHEMA[t] for t in tables}, **meta}
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (tuple, set)):
        return list(o)
    if hasattr(o, "__dataclass_fields__"):
        return asdict(o)
    return str(o)


def paired_bootstrap_pvalue(a, b, n_boot: int = 10000, rng=None) -> float:
    """One-sided p-value for mean(a) <= mean(b) using a paired bootstrap of a - b.

    Returns the bootstrap share of resampled mean differences that are > 0,
    so a small value supports mean(a) < mean(b).
    """
    a, b = np.asarray(a, float), np.asarray(b, float)
    if a.shape != b.shape:
        raise ValueError("paired samples need equal length")
    diff = a - b
    rng = np.random.default_rng(0) if rng is None else rng
    idx = rng.integers(0, diff.size, size=(n_boot, diff.size))
    means = diff[idx].mean(axis=1)
    return float(np.mean(means > 0))


@dataclass
class CvRecord:
    run_id: int
    T: int
    c: float
    lam: float
    degenerate: bool = False
    scores: list = field(default_factory=list, repr=False)


def run_cv(env: Environment, reps: int, knobs: Knobs, base_seed: int = 0) -> list[CvRecord]:
    out = []
    k = Knobs(**{**asdict(knobs), "lambda_cv": True})
    for r in range(reps):
        lam, cv = choose_lambda(env, k, base_seed, r)
        out.append(CvRecord(r, env.T, cv.c, lam, cv.degenerate, cv.scores.tolist()))
    return out
