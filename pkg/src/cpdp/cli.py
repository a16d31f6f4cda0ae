"""Command line entry point: ``cpdp {simulate,sweep,cv,segment,replay,surrogate}``.

Every option can also come from ``--config FILE``, a flat ``key = value``
file whose keys are the long option names (``lambda-c`` or ``lambda_c``).
Options given on the command line override the file. Unknown keys are errors.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import harness
from .estimator import lambda_for
from .glm import LOGISTIC
from .market import loglog_slope, scenario
from .policies import POLICY_NAMES
from .segmenter import (LOAN_FEATURES, bic_segment, loan_surrogate, read_replay_csv,
                        replay_environment, write_replay_csv)

log = logging.getLogger("cpdp")


def _int_list(text):
    try:
        vals = sorted({int(v) for v in str(text).split(",") if v.strip()})
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty horizon list")
    if vals[0] < 1:
        raise argparse.ArgumentTypeError("horizons must be positive")
    return vals


def _name_list(text):
    return [v.strip() for v in str(text).split(",") if v.strip()]


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _float_or_inf(text):
    return float("inf") if str(text).strip().lower() in ("inf", "infinity") else float(text)


def _common(p, lambda_c=0.2):
    p.add_argument("--config", help="key = value file of defaults")
    p.add_argument("--policies", type=_name_list, default=list(POLICY_NAMES),
                   help="comma-separated subset of " + ",".join(POLICY_NAMES))
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lambda-c", type=float, default=lambda_c)
    p.add_argument("--lambda-cv", type=_bool, nargs="?", const=True, default=False,
                   help="choose lambda by cross-validation on a sqrt(T) pilot")
    p.add_argument("--m", type=int, default=None, help="exploration length (default ceil(log(Td)^1.1))")
    p.add_argument("--gamma", type=float, default=None, help="detection threshold (default m)")
    p.add_argument("--eta-sw", type=_float_or_inf, default=8.0, help="SW-DP window in cycles")
    p.add_argument("--rho-df", type=float, default=0.99, help="DF-DP discount per period")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="out")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cpdp", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="replicated episodes on a synthetic scenario")
    p.add_argument("--scenario", default="S3")
    p.add_argument("--T", type=_int_list, default=None, help="horizon(s)")
    p.add_argument("--interval", type=int, default=10000, help="segment length for S4 variants")
    _common(p)

    p = sub.add_parser("sweep", help="regret against horizon with log-log slopes")
    p.add_argument("--scenario", default="S1")
    p.add_argument("--T", type=_int_list, default=[2000, 5000, 10000, 20000])
    p.add_argument("--interval", type=int, default=10000)
    _common(p)

    p = sub.add_parser("cv", help="pilot cross-validated lambda per replication")
    p.add_argument("--scenario", default="S3")
    p.add_argument("--T", type=_int_list, default=[10000])
    p.add_argument("--interval", type=int, default=10000)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--folds", type=int, default=None)
    p.add_argument("--config")
    p.add_argument("--out", default="out")

    p = sub.add_parser("segment", help="offline BIC segmentation of a response/price CSV")
    p.add_argument("--csv", required=True)
    _segment_opts(p)
    p.add_argument("--config")
    p.add_argument("--out", default="out")

    p = sub.add_parser("replay", help="policies on an environment fitted to a CSV")
    p.add_argument("--csv", required=True)
    _segment_opts(p)
    p.add_argument("--price-bounds", type=float, nargs=2, default=(0.0, 14.0))
    p.add_argument("--experiment-set", type=float, nargs=2, default=(0.2, 6.0))
    _common(p, lambda_c=0.02)

    p = sub.add_parser("surrogate", help="write a synthetic loan-application CSV")
    p.add_argument("--T", type=int, default=50000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config")
    p.add_argument("--out", default="loan_surrogate.csv", help="CSV path")
    return parser


def _segment_opts(p):
    p.add_argument("--selected", type=_name_list, default=None,
                   help="covariates used in the segment models (default: all)")
    p.add_argument("--min-seg", type=int, default=None)
    p.add_argument("--max-k", type=int, default=10)
    p.add_argument("--step", type=int, default=1, help="grid spacing of candidate change-points")
    p.add_argument("--penalty-scale", type=float, default=1.0)


def read_config(path) -> list[tuple[str, str]]:
    items = []
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key = value")
            key, value = (s.strip() for s in line.split("=", 1))
            items.append((key.replace("_", "-"), value))
    return items


def _config_argv(subparser, items, path):
    known = {}
    for action in subparser._actions:
        for opt in action.option_strings:
            if opt.startswith("--"):
                known[opt[2:]] = action
    argv = []
    for key, value in items:
        action = known.get(key)
        if action is None or key == "config":
            raise ValueError(f"{path}: unknown key {key!r}")
        if action.nargs not in (None, "?"):
            argv += [f"--{key}", *value.replace(",", " ").split()]
        else:
            argv += [f"--{key}", value]
    return argv


def parse_args(argv=None):
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        sub = parser._subparsers._group_actions[0].choices[args.command]
        try:
            extra = _config_argv(sub, read_config(args.config), args.config)
        except (OSError, ValueError) as exc:
            parser.error(str(exc))
        i = argv.index(args.command)
        args = parser.parse_args(argv[:i + 1] + extra + argv[i + 1:])
    return args


def _knobs(args) -> harness.Knobs:
    return harness.Knobs(lambda_c=args.lambda_c, lambda_cv=args.lambda_cv, m=args.m,
                         gamma=args.gamma, eta_sw=args.eta_sw, rho_df=args.rho_df)


def _envs(args):
    horizons = args.T if args.T is not None else [None]
    return [scenario(args.scenario, T, interval=args.interval) for T in horizons]


def _meta(args, **extra):
    d = {k: v for k, v in vars(args).items() if k not in ("config", "verbose", "out", "workers")}
    d.update(extra)
    return {"command": args.command, "config": d}


def cmd_simulate(args):
    envs = _envs(args)
    results = harness.run_experiment(envs, args.policies, args.reps, _knobs(args),
                                     args.seed, args.workers)
    harness.write_results(args.out, results, _meta(args))
    _print_summary(harness.summarise(results))
    return results


def cmd_sweep(args):
    if len(args.T) < 3:
        raise ValueError("a sweep needs at least three horizons")
    summary = harness.summarise(cmd_simulate(args))
    slopes = []
    for policy in args.policies:
        pts = [(r["T"], r["mean_regret"]) for r in summary if r["policy"] == policy]
        slopes.append([policy, loglog_slope([r for _, r in pts], [T for T, _ in pts])])
    harness.write_csv(os.path.join(args.out, "slopes.csv"), ["policy", "slope"], slopes)
    harness.write_manifest(args.out, _meta(args),
                           ["regret_curve", "summary", "events", "slopes"])
    for policy, s in slopes:
        print(f"{policy:9s} slope {s:.4f}")
    return slopes


def cmd_cv(args):
    os.makedirs(args.out, exist_ok=True)
    knobs = harness.Knobs(cv_folds=args.folds)
    rows = []
    for env in _envs(args):
        recs = harness.run_cv(env, args.reps, knobs, args.seed)
        rows += [[r.run_id, r.T, r.c, r.lam, r.degenerate] for r in recs]
        lams = np.array([r.lam for r in recs])
        q = np.quantile(lams, [0, 0.25, 0.5, 0.75, 1])
        print(f"T={env.T}: lambda_cv quantiles " + " ".join(f"{v:.3f}" for v in q)
              + f" (lambda_fix at c=0.2: {lambda_for(0.2, env.T, env.d):.3f})")
    harness.write_csv(os.path.join(args.out, "cv.csv"), harness.CV_HEADER, rows)
    harness.write_manifest(args.out, _meta(args), ["cv"])


def _segment(args, data):
    X = data.design(args.selected)
    return bic_segment(LOGISTIC, (X, data.y), min_seg=args.min_seg, max_K=args.max_k,
                       step=args.step, penalty_scale=args.penalty_scale)


def _write_segments(out, data, seg, selected):
    os.makedirs(out, exist_ok=True)
    names = [data.names[i] for i in data.columns(selected)]
    rows = []
    for k, ((a, b), th) in enumerate(zip(seg.bounds(len(data)), seg.thetas), start=1):
        rows.append([k, a, b, *th])
    harness.write_csv(os.path.join(out, "segments.csv"),
                      ["segment", "start", "end", "intercept", *names, "price"], rows)


def cmd_segment(args):
    data = read_replay_csv(args.csv)
    seg = _segment(args, data)
    _write_segments(args.out, data, seg, args.selected)
    harness.write_manifest(args.out, _meta(args, tau_hat=seg.tau_hat.tolist(),
                                           objective=seg.objective), [])
    print(f"K = {seg.K}, change-points {seg.tau_hat.tolist()}, F = {seg.objective:.6g}")
    return seg


def cmd_replay(args):
    data = read_replay_csv(args.csv)
    seg = _segment(args, data)
    _write_segments(args.out, data, seg, args.selected)
    env = replay_environment(data, seg, LOGISTIC, args.selected, tuple(args.price_bounds),
                             tuple(args.experiment_set))
    results = harness.run_experiment([env], args.policies, args.reps, _knobs(args),
                                     args.seed, args.workers)
    harness.write_results(args.out, results,
                          _meta(args, tau_hat=seg.tau_hat.tolist(), objective=seg.objective))
    _print_summary(harness.summarise(results))
    return results


def cmd_surrogate(args):
    data, _ = loan_surrogate(args.T, np.random.default_rng(args.seed))
    write_replay_csv(args.out, data)
    print(f"wrote {len(data)} rows to {args.out}; segment covariates: {','.join(LOAN_FEATURES)}")


def _print_summary(rows):
    for r in rows:
        delay = "" if r["mean_delay_tau1"] is None else f" delay_tau1 {r['mean_delay_tau1']:.1f}"
        print(f"{r['policy']:9s} T={r['T']:<7d} mean regret {r['mean_regret']:.1f} "
              f"(sd {r['sd']:.1f}) detected {r['mean_detected_K']:.2f}{delay}")


COMMANDS = {"simulate": cmd_simulate, "sweep": cmd_sweep, "cv": cmd_cv, "segment": cmd_segment,
            "replay": cmd_replay, "surrogate": cmd_surrogate}


def main(argv=None) -> int:
    args = parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except (ValueError, OSError) as exc:
        print(f"cpdp {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
