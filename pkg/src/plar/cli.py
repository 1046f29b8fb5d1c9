"""Command-line entry point: ``plar <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .backfit import BackfitConfig, FixedK, Stabilized, run_backfit
from .errors import PlarError
from .forecast import holdout_intervals, interval, retro_residuals, write_intervals_csv
from .harness import ExperimentPlan, parse_ns, resolve_model, run_plan, stopping_study
from .model import Trajectory, simulate


def _stop_mode(args) -> FixedK | Stabilized:
    return FixedK(args.k) if args.k is not None else Stabilized()


def _fit_config(args) -> BackfitConfig:
    return BackfitConfig(max_iters=args.max_iters, tol=args.tol, stop_mode=_stop_mode(args))


def cmd_simulate(args) -> int:
    spec = resolve_model(args.model, args.seed)
    traj = simulate(spec, args.n, args.burn_in)
    traj.to_csv(args.out)
    print(f"wrote {args.n} observations to {args.out}")
    return 0


def cmd_estimate(args) -> int:
    traj = Trajectory.from_csv(args.data)
    result = run_backfit(traj, args.p, _fit_config(args))
    summary = {
        "k_stop": result.k_stop,
        "theta_hat": result.theta_hat.tolist(),
        "stabilized": result.stabilized,
        "spectral_radius_A_n": result.spectral_radius,
        "h_b": result.h_b,
        "h_sigma": result.h_sigma,
    }
    if args.out is not None:
        result.export(args.out)
    print(json.dumps(summary, indent=2))
    if result.not_stabilized:
        print(f"warning: not stabilised within {args.max_iters} iterations", file=sys.stderr)
    return 0


def cmd_forecast(args) -> int:
    traj = Trajectory.from_csv(args.data)
    cfg = _fit_config(args)
    if args.holdout:
        if args.holdout >= traj.n:
            raise SystemExit("--holdout must be smaller than the series length")
        fit_n = traj.n - args.holdout
        train = traj.head(fit_n)
        result = run_backfit(train, args.p, cfg)
        r = retro_residuals(result, train)
        ivs = holdout_intervals(result, train.x, traj.x[fit_n:], traj.e[fit_n:], args.alpha, r)
        rows = list(zip(range(fit_n + 1, traj.n + 1), ivs))
        hits = sum(iv.covers(x) for iv, x in zip(ivs, traj.x[fit_n:]))
        print(f"coverage {hits}/{len(ivs)} = {hits / len(ivs):.4f} at nominal {1 - args.alpha:.4f}")
    else:
        if args.e_next is None:
            raise SystemExit("--e-next is required unless --holdout is given")
        result = run_backfit(traj, args.p, cfg)
        last = traj.x[::-1][: args.p]
        iv = interval(result, traj, last, args.e_next, args.alpha)
        rows = [(traj.n + 1, iv)]
        print(f"t={traj.n + 1} point={iv.point:.6g} interval=[{iv.lo:.6g}, {iv.hi:.6g}]")
    if args.out is not None:
        write_intervals_csv(args.out, rows)
    return 0


def cmd_mc_rate(args) -> int:
    if args.config is not None:
        plan = ExperimentPlan.from_json(args.config)
    else:
        kw = {"model": args.model, "base_seed": args.seed}
        if args.ns is not None:
            kw["ns"] = parse_ns(args.ns)
        if args.reps is not None:
            kw["reps"] = args.reps
        if args.k is not None:
            kw["k_policy"] = FixedK(args.k)
        plan = ExperimentPlan.full_scale(**kw) if args.full_scale else ExperimentPlan(**kw)
    plan.outputs = Path(args.out)
    table = run_plan(plan, args.workers)
    for row in table.rows():
        print(f"n={row['n']:>6} reps={row['count']:>3} theta_err={row.get('theta_err', float('nan')):.4g} "
              f"b_N2={row.get('b_N2', float('nan')):.4g}")
    for col, fit in table.slopes().items():
        if fit is not None:
            print(f"slope {col:<10} {fit.slope:.3f}")
    if table.failures:
        print(f"{len(table.failures)} replications failed; see rate_table.json", file=sys.stderr)
    return 0


def cmd_stopping(args) -> int:
    models = [m.strip() for m in args.models.split(",") if m.strip()]
    table = stopping_study(models, parse_ns(args.ns), args.reps, args.tol, base_seed=args.seed,
                           max_iters=args.max_iters, outputs=args.out, workers=args.workers)
    for m in table.models:
        med = ", ".join(f"{n}:{table.median(m, n):g}" for n in table.ns)
        print(f"{m:<6} median k(n): {med}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="plar", description="Partially linear autoregression toolkit.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def fit_opts(p):
        p.add_argument("--data", required=True, help="CSV with columns t,x,e")
        p.add_argument("--p", type=int, required=True, help="autoregressive order")
        p.add_argument("--k", type=int, default=None, help="fixed iteration count (default: stabilised)")
        p.add_argument("--stabilized", dest="k", action="store_const", const=None,
                       help="stop when successive increments fall below --tol")
        p.add_argument("--tol", type=float, default=1e-3)
        p.add_argument("--max-iters", type=int, default=50)

    p = sub.add_parser("simulate", help="draw a trajectory from a model")
    p.add_argument("--model", required=True, help="plus | minus | ar4 | custom:<spec.json>")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--burn-in", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="fit theta, b and sigma^2 by backfitting")
    fit_opts(p)
    p.add_argument("--out", default=None, help="directory for result.json and grid CSVs")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("forecast", help="one-step prediction intervals")
    fit_opts(p)
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--e-next", type=float, default=None, help="input value for the next step")
    p.add_argument("--holdout", type=int, default=0, help="score intervals on the last N points")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("mc-rate", help="Monte Carlo convergence-rate study")
    p.add_argument("--model", default="minus")
    p.add_argument("--ns", default=None, help="comma list or start:stop:step")
    p.add_argument("--reps", type=int, default=None)
    p.add_argument("--k", type=int, default=None, help="fixed iteration count (default 20)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--full-scale", action="store_true")
    p.add_argument("--config", default=None, help="JSON experiment plan (overrides other options)")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_mc_rate)

    p = sub.add_parser("stopping", help="stabilised stopping index k(n) across models")
    p.add_argument("--models", default="plus,minus,ar4")
    p.add_argument("--ns", default="200:1000:200")
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--tol", type=float, default=1e-3)
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stopping)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    np.seterr(all="ignore")
    try:
        return args.func(args)
    except PlarError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
