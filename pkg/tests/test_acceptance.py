"""Acceptance criteria, each reported as one PASS/FAIL line in the terminal summary.

All seeds are fixed here in advance; none is tuned to the outcome.
"""

import math

import numpy as np
import pytest

from plar import cli
from plar.backfit import BackfitConfig, FixedK, build_phi, run_backfit
from plar.forecast import holdout_intervals, retro_residuals
from plar.harness import ExperimentPlan, builtin_model, run_plan, stopping_study
from plar.kernel import Domain, KernelKind, nw_smooth
from plar.metrics import fn_norms
from plar.model import ModelSpec, SymbolicFn, simulate

SEED = 0
RATE_BAND = (0.15, 0.35)


@pytest.fixture(scope="module")
def rate_table():
    plan = ExperimentPlan(model="minus", ns=(200, 500, 1000, 2000, 4000), reps=20,
                          k_policy=FixedK(20), base_seed=SEED)
    return run_plan(plan)


def test_ac1_rate_reproduction(rate_table, record_criterion):
    slopes = rate_table.slopes()
    th, b2 = slopes["theta_err"].slope, slopes["b_N2"].slope
    lo, hi = RATE_BAND
    ok = record_criterion("AC1 rate slopes", lo <= th <= hi and lo <= b2 <= hi,
                          f"theta slope {th:.3f}, b N2 slope {b2:.3f}, band [{lo}, {hi}]")
    assert ok


def test_ac2_stopping_behaviour(record_criterion):
    ns = list(range(100, 1001, 100))
    table = stopping_study(["minus", "plus", "ar4"], ns, reps=5, tol=1e-3, base_seed=SEED, max_iters=500)
    k_minus = [r.k_stop for r in table.records if r.model == "minus"]
    minus_in_band = all(4 <= k <= 10 for k in k_minus)
    plus_above = all(table.median("plus", n) > table.median("minus", n) for n in ns)
    ar4_between = all(table.median("minus", n) < table.median("ar4", n) < table.median("plus", n) for n in ns)
    med = {m: [table.median(m, n) for n in ns] for m in ("minus", "ar4", "plus")}
    detail = (f"(-) k in [{min(k_minus)}, {max(k_minus)}] ok={minus_in_band}; (+) > (-) ok={plus_above}; "
              f"(4) between ok={ar4_between}; medians (-) {med['minus']} (4) {med['ar4']} (+) {med['plus']}")
    ok = record_criterion("AC2 stopping", minus_in_band and plus_above and ar4_between, detail)
    assert ok


def test_ac3_contraction(record_criterion):
    traj = simulate(builtin_model("minus", seed=SEED), 2000)
    a = run_backfit(traj, 1, BackfitConfig(theta_init=(0.0,), stop_mode=FixedK(15)))
    b = run_backfit(traj, 1, BackfitConfig(theta_init=(10.0,), stop_mode=FixedK(15)))
    A = a.A_n
    gaps = a.theta_history - b.theta_history
    recursion = max(float(np.max(np.abs(gaps[k] - A @ gaps[k - 1]))) for k in range(1, len(gaps)))
    norms = np.linalg.norm(gaps, axis=1)
    rho = a.spectral_radius
    # same absolute slack per step as the recursion check
    geometric = bool(np.all(norms[1:] <= rho * norms[:-1] + 1e-8))
    live = norms[:-1] > 1e-6
    ratios = norms[1:][live] / norms[:-1][live]
    ok = record_criterion(
        "AC3 contraction", recursion <= 1e-8 and geometric and rho < 1,
        f"max recursion residual {recursion:.2e}, max gap ratio {ratios.max():.4f}, spectral radius {rho:.4f}")
    assert ok


def test_ac4_ols_oracle(record_criterion):
    spec = ModelSpec([0.6], SymbolicFn.zero(), SymbolicFn.constant(1.0), builtin_model("minus").seasonal_s,
                     seed=SEED)
    traj = simulate(spec, 2000)
    res = run_backfit(traj, 1, BackfitConfig(update_b=False, stop_mode=FixedK(2), theta_init=(0.3,)))
    phi = build_phi(traj, 1)
    ols = np.linalg.lstsq(phi, traj.x[1:], rcond=None)[0]
    gap = float(np.max(np.abs(res.theta_history[1] - ols)))
    ok = record_criterion("AC4 OLS equivalence", gap <= 1e-10, f"|theta^(2) - theta_OLS| = {gap:.2e}")
    assert ok


def test_ac5_smoother_exactness(record_criterion):
    rng = np.random.default_rng(SEED)
    e = rng.uniform(-6, 6, 2000)
    worst = 0.0
    for kernel in (KernelKind.gaussian(), KernelKind.epanechnikov()):
        fit = nw_smooth(np.linspace(-6, 6, 201), e, np.full(e.size, 3.7), kernel, 0.3)
        worst = max(worst, float(np.max(np.abs(fit - 3.7))))
    n1, n2, ninf = fn_norms(lambda x: x, lambda x: 0 * x, Domain.interval(0.0, 1.0))
    closed = (0.5, 1 / math.sqrt(3), 1.0)
    norm_gap = max(abs(v - c) for v, c in zip((n1, n2, ninf), closed))
    ok = record_criterion("AC5 smoother exactness", worst <= 1e-12 and norm_gap <= 1e-3,
                          f"constant reproduction error {worst:.1e}; norms ({n1:.5f}, {n2:.5f}, {ninf:.5f})")
    assert ok


def test_ac6_interval_coverage(record_criterion):
    n, holdout = 5000, 1000
    traj = simulate(builtin_model("minus", seed=SEED), n + holdout)
    train = traj.head(n)
    res = run_backfit(train, 1, BackfitConfig(stop_mode=FixedK(20)))
    r = retro_residuals(res, train)
    x_new, e_new = traj.x[n:], traj.e[n:]

    def coverage(alpha):
        ivs = holdout_intervals(res, train.x, x_new, e_new, alpha, r)
        return float(np.mean([iv.covers(x) for iv, x in zip(ivs, x_new)]))

    c10, c05, c20 = coverage(0.10), coverage(0.05), coverage(0.20)
    ok = record_criterion("AC6 coverage", 0.87 <= c10 <= 0.93 and c05 >= c20,
                          f"coverage alpha=0.10 {c10:.3f} (target [0.87, 0.93]); alpha=0.05 {c05:.3f} "
                          f">= alpha=0.20 {c20:.3f}")
    assert ok


def test_ac7_report_invariants(rate_table, record_criterion):
    bad = [(r.n, r.rep, v) for r in rate_table.reports for v in r.check_invariants(slack=1e-9)]
    ok = record_criterion("AC7 report invariants", not bad and len(rate_table.reports) == 100,
                          f"{len(rate_table.reports)} reports checked, {len(bad)} violations")
    assert ok


def test_ac8_cli_determinism(tmp_path, record_criterion):
    def commands(d):
        data = tmp_path / "data.csv"
        return [
            ["simulate", "--model", "minus", "--n", "600", "--seed", "5", "--out", str(d / "sim.csv")],
            ["estimate", "--data", str(data), "--p", "1", "--stabilized", "--tol", "1e-3", "--out", str(d / "est")],
            ["estimate", "--data", str(data), "--p", "1", "--k", "10", "--out", str(d / "est_k")],
            ["forecast", "--data", str(data), "--p", "1", "--alpha", "0.1", "--e-next", "0.3",
             "--out", str(d / "fc.csv")],
            ["mc-rate", "--model", "minus", "--ns", "200,300", "--reps", "2", "--seed", "5", "--out", str(d / "mc")],
            ["stopping", "--models", "plus,minus,ar4", "--ns", "100:300:100", "--reps", "2", "--tol", "1e-3",
             "--out", str(d / "st")],
        ]

    assert cli.main(["simulate", "--model", "minus", "--n", "600", "--seed", "5",
                     "--out", str(tmp_path / "data.csv")]) == 0
    runs = []
    for tag in ("first", "second"):
        d = tmp_path / tag
        d.mkdir()
        for args in commands(d):
            assert cli.main(args) == 0, args
        runs.append(d)
    files = sorted(p.relative_to(runs[0]) for p in runs[0].rglob("*.csv"))
    differ = [str(f) for f in files if (runs[0] / f).read_bytes() != (runs[1] / f).read_bytes()]
    ok = record_criterion("AC8 CLI determinism", bool(files) and not differ,
                          f"{len(files)} CSV files compared across reruns, {len(differ)} differ")
    assert ok
