"""Acceptance criteria at desk scale. Each test records one PASS/FAIL line.

The lines are printed in the terminal summary (section "acceptance criteria").
"""

import math

import numpy as np
import pytest

from cpdp import harness
from cpdp.glm import LOGISTIC, kl_divergence_mc
from cpdp.market import THETA1, THETA2, THETA2_STAR, UniformCovariates, loglog_slope, scenario
from cpdp.segmenter import LOAN_FEATURES, bic_segment, loan_surrogate, replay_environment

from conftest import ACCEPTANCE_LINES

pytestmark = pytest.mark.slow

HORIZONS = (2000, 5000, 10000, 20000)
SWEEP_REPS = 50
MAIN_REPS = 100
T_MAIN = 20000


def record(n, ok, detail):
    ACCEPTANCE_LINES.append(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    return ok


def mean_total(results, policy, T=None):
    return float(np.mean([r.total for r in results if r.policy == policy
                          and (T is None or r.T == T)]))


def totals(results, policy):
    rs = sorted((r for r in results if r.policy == policy), key=lambda r: r.run_id)
    return np.array([r.total for r in rs])


@pytest.fixture(scope="module")
def s3_main():
    env = scenario("S3", T_MAIN)
    return harness.run_experiment([env], list(harness.POLICY_NAMES), MAIN_REPS, harness.Knobs())


@pytest.fixture(scope="module")
def s3_star():
    env = scenario("S3star", T_MAIN)
    return harness.run_experiment([env], ["CPDP"], MAIN_REPS, harness.Knobs())


@pytest.mark.parametrize("name", ["S1", "S3"])
def test_criterion_1_regret_scaling(name, s3_main):
    envs = [scenario(name, T) for T in HORIZONS if not (name == "S3" and T == T_MAIN)]
    res = harness.run_experiment(envs, ["CPDP"], SWEEP_REPS, harness.Knobs())
    if name == "S3":
        # the T = 20000 runs are shared with the main S3 experiment (same seeds)
        res += [r for r in s3_main if r.policy == "CPDP" and r.run_id < SWEEP_REPS]
    means = [mean_total(res, "CPDP", T) for T in HORIZONS]
    slope = loglog_slope(means, HORIZONS)
    ok = 0.40 <= slope <= 0.65
    record(1, ok, f"{name} CPDP log-log slope {slope:.4f} in [0.40, 0.65] "
                  f"(mean regret {', '.join(f'{m:.0f}' for m in means)}; {SWEEP_REPS} reps)")
    assert ok


def test_criterion_2_detection_count(s3_main):
    K = np.array([len(r.tau_hats) for r in s3_main if r.policy == "CPDP"])
    mean_K, over = float(K.mean()), float(np.mean(K > 3))
    ok = 2.8 <= mean_K <= 3.2 and over <= 0.05
    record(2, ok, f"S3 T={T_MAIN} mean detected K {mean_K:.2f} in [2.8, 3.2], "
                  f"P(K > 3) {over:.2f} <= 0.05")
    assert ok


def _tau1_delay(results):
    d = [r.delays[0] for r in results if r.policy == "CPDP" and r.delays[0] is not None]
    missed = sum(1 for r in results if r.policy == "CPDP" and r.delays[0] is None)
    return float(np.mean(d)), missed


def test_criterion_3_delay_ratio(s3_main, s3_star):
    base, miss_a = _tau1_delay(s3_main)
    hard, miss_b = _tau1_delay(s3_star)
    ratio = hard / base
    ok = 2.0 <= ratio <= 5.0
    record(3, ok, f"tau1 delay S3star {hard:.1f} / S3 {base:.1f} = {ratio:.2f} in [2, 5] "
                  f"(missed {miss_b} / {miss_a})")
    assert ok


def test_criterion_4_kl():
    rng = np.random.default_rng(2024)
    prices = lambda r, n: r.uniform(1, 15, n)
    a, _ = kl_divergence_mc(LOGISTIC, THETA1, THETA2, UniformCovariates(50), prices, 10 ** 6, rng)
    b, _ = kl_divergence_mc(LOGISTIC, THETA1, THETA2_STAR, UniformCovariates(50), prices,
                            10 ** 6, rng)
    ok = abs(a - 0.814) <= 0.02 and abs(b - 0.282) <= 0.02
    record(4, ok, f"KL(theta1, theta2) {a:.4f} vs 0.814, KL(theta1, theta2*) {b:.4f} vs 0.282 "
                  f"(+-0.02, 1e6 samples)")
    assert ok


def test_criterion_5_policy_ordering(s3_main):
    means = {p: mean_total(s3_main, p) for p in harness.POLICY_NAMES}
    best_window = min(("SW-DP", "DF-DP"), key=means.get)
    chain = ["OPT-DP", "CPDP", best_window, "Naive-DP"]
    rng = np.random.default_rng(0)
    pvals = [harness.paired_bootstrap_pvalue(totals(s3_main, a), totals(s3_main, b), rng=rng)
             for a, b in zip(chain, chain[1:])]
    ratio = means["CPDP"] / means["OPT-DP"]
    ok = all(p <= 0.05 for p in pvals) and ratio <= 1.5
    steps = ", ".join(f"{a} <= {b} p={p:.3f}" for (a, b), p in zip(zip(chain, chain[1:]), pvals))
    record(5, ok, f"S3 T={T_MAIN} {steps}; CPDP/OPT-DP {ratio:.3f} <= 1.5; means "
                  + " ".join(f"{k}={v:.0f}" for k, v in means.items()))
    assert ok


def test_criterion_6_property_suites():
    import test_detector
    import test_estimator
    import test_glm
    import test_policies
    import test_segmenter
    from cpdp.estimator import LassoConfig

    checks = {
        "a gradient vs finite differences": test_glm.test_gradient_matches_finite_differences,
        "b D >= -tol and penalty dominance": lambda: [
            test_detector.test_nonnegativity_and_penalty_dominance(s)
            for s in (LassoConfig(), test_detector.PRACTICAL)],
        "c Gaussian RSS oracle": test_detector.test_gaussian_unpenalised_statistic_is_rss_decomposition,
        "d soft-threshold oracle": test_estimator.test_univariate_soft_threshold_oracle,
        "e DP = exhaustive enumeration": lambda: [
            test_segmenter.test_dp_matches_exhaustive_enumeration(*case)
            for case in [(120, 1, [50]), (300, 5, [100, 210]), (300, 5, []), (240, 4, [120])]],
        "f SW(inf) = DF(1) = Naive": lambda: [
            test_policies.test_reductions_to_naive_bit_for_bit(o)
            for o in (dict(name="SW-DP", eta_sw=math.inf), dict(name="DF-DP", rho_df=1.0))],
    }
    failed = []
    for label, fn in checks.items():
        try:
            fn()
        except AssertionError:
            failed.append(label)
    ok = not failed
    record(6, ok, "property suites a-f" + (f" failed: {failed}" if failed else " all hold"))
    assert ok


def test_criterion_7_s4_scaling():
    interval, upsilons = 2500, (2, 4, 8)
    envs = [scenario(f"S4-small({u},{interval})") for u in upsilons]
    res = harness.run_experiment(envs, ["CPDP"], SWEEP_REPS, harness.Knobs())
    means = [mean_total(res, "CPDP", e.T) for e in envs]
    x = [u * e.T for u, e in zip(upsilons, envs)]
    slope = loglog_slope(means, x)
    ok = 0.40 <= slope <= 0.65
    record(7, ok, f"S4-small(I={interval}) slope of mean regret vs Upsilon*T {slope:.4f} "
                  f"in [0.40, 0.65] (mean regret {', '.join(f'{m:.0f}' for m in means)})")
    assert ok


def test_criterion_7_surrogate_replay_ordering():
    T = 20000
    data, _ = loan_surrogate(T, np.random.default_rng(0))
    seg = bic_segment(LOGISTIC, (data.design(LOAN_FEATURES), data.y), step=250)
    env = replay_environment(data, seg, LOGISTIC, LOAN_FEATURES)
    res = harness.run_experiment([env], list(harness.POLICY_NAMES), SWEEP_REPS,
                                 harness.Knobs(lambda_c=0.02))
    means = {p: mean_total(res, p) for p in harness.POLICY_NAMES}
    order = means["CPDP"] < means["Naive-DP"] < means["BK-DP"]
    opt = all(means["OPT-DP"] <= v for v in means.values())
    ok = order and opt
    record(7, ok, f"surrogate replay T={T} (K={seg.K}, cuts {seg.tau_hat.tolist()}): "
                  f"CPDP < Naive-DP < BK-DP {order}, OPT-DP minimal {opt}; means "
                  + " ".join(f"{k}={v:.0f}" for k, v in means.items()))
    assert ok
