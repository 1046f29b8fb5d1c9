"""Monte Carlo experiments: built-in models, rate study and stopping-time study.

Replications are independent tasks keyed by ``(base_seed, rep, n)``; they may run
in worker processes, but results are always aggregated in (n, rep) order so the
written files do not depend on scheduling. ``PLAR_THREADS`` caps the number of
workers (0 or unset means one per CPU).
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .backfit import BackfitConfig, FixedK, Stabilized, run_backfit
from .errors import InvalidInputError
from .kernel import BandwidthRule
from .metrics import REPORT_COLUMNS, ErrorReport, RateFit, error_report, fit_rate
from .model import ModelSpec, NoiseLaw, SymbolicFn, coeffs_from_roots, simulate

logger = logging.getLogger(__name__)

SEASONAL_CYCLE = (-1.2, 3.1, 1.80, -2.51, -3.2, -0.25)
AR4_ROOTS = (0.5, -0.5, 0.75, 0.25)
MODEL_IDS = ("plus", "minus", "ar4")
_ALIASES = {"plusar1": "plus", "+": "plus", "minusar1": "minus", "-": "minus", "4": "ar4"}

DESK_NS = (200, 500, 1000, 2000, 4000)
DESK_REPS = 20
FULL_NS = (200,) + tuple(range(500, 10001, 500))
FULL_REPS = 50

RATE_COLUMNS = REPORT_COLUMNS[2:]


def builtin_model(model_id: str, seed: int = 0) -> ModelSpec:
    """One of the three reference models: ``plus``, ``minus`` or ``ar4``.

    All share b(e) = sqrt|e|, sigma(e) = 1 + e^2/24, a 6-periodic cycle,
    eta ~ U[-3, 3] and standard Gaussian eps; they differ in theta.
    """
    key = _ALIASES.get(model_id.lower(), model_id.lower())
    if key == "plus":
        theta = [0.7]
    elif key == "minus":
        theta = [-0.7]
    elif key == "ar4":
        theta = coeffs_from_roots(AR4_ROOTS)
    else:
        raise InvalidInputError(f"unknown model {model_id!r}; expected one of {MODEL_IDS}")
    return ModelSpec(
        theta=theta,
        b_fn=SymbolicFn.sqrt_abs(),
        sigma_fn=SymbolicFn.quadratic_affine(1.0, 1.0 / 24.0),
        seasonal_s=SEASONAL_CYCLE,
        eta_law=NoiseLaw.uniform(3.0),
        eps_law=NoiseLaw.gaussian(),
        seed=seed,
    )


def resolve_model(ident: str | ModelSpec, seed: int | None = None) -> ModelSpec:
    """Built-in id, ``custom:<path.json>``, or a spec passed through."""
    if isinstance(ident, ModelSpec):
        spec = ident
    elif ident.startswith("custom:"):
        spec = ModelSpec.from_json(ident[len("custom:"):])
    else:
        spec = builtin_model(ident)
    return spec if seed is None else spec.with_seed(seed)


def worker_count(workers: int | None = None) -> int:
    if workers is None:
        workers = int(os.environ.get("PLAR_THREADS", "0") or 0)
    if workers < 0:
        raise InvalidInputError("worker count must be >= 0")
    return workers or (os.cpu_count() or 1)


def _map_ordered(fn: Callable, tasks: list[tuple], workers: int) -> list:
    """Apply ``fn(*task)`` to every task; results come back in task order."""
    if workers <= 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        futures = [pool.submit(fn, *t) for t in tasks]
        return [f.result() for f in futures]


# --------------------------------------------------------------------------
# Rate study
# --------------------------------------------------------------------------


@dataclass
class ExperimentPlan:
    model: str | ModelSpec = "minus"
    ns: tuple[int, ...] = DESK_NS
    reps: int = DESK_REPS
    k_policy: FixedK | Stabilized = field(default_factory=lambda: FixedK(20))
    base_seed: int = 0
    outputs: Path | None = None
    tol: float = 1e-3
    max_iters: int = 50
    bw_b: BandwidthRule = field(default_factory=BandwidthRule.default_b)
    bw_sigma: BandwidthRule = field(default_factory=BandwidthRule.default_sigma)

    def __post_init__(self):
        self.ns = tuple(int(n) for n in self.ns)
        if not self.ns or any(b <= a for a, b in zip(self.ns, self.ns[1:])):
            raise InvalidInputError("ns must be non-empty and strictly increasing")
        if self.reps < 1:
            raise InvalidInputError("reps must be >= 1")
        if self.outputs is not None:
            self.outputs = Path(self.outputs)

    @classmethod
    def full_scale(cls, **kw) -> "ExperimentPlan":
        kw.setdefault("ns", FULL_NS)
        kw.setdefault("reps", FULL_REPS)
        return cls(**kw)

    def spec(self) -> ModelSpec:
        return resolve_model(self.model, self.base_seed)

    def config(self) -> BackfitConfig:
        return BackfitConfig(max_iters=self.max_iters, tol=self.tol, bw_b=self.bw_b,
                             bw_sigma=self.bw_sigma, stop_mode=self.k_policy)

    def to_dict(self) -> dict:
        model = self.model.to_dict() if isinstance(self.model, ModelSpec) else self.model
        k = {"mode": "fixed", "k": self.k_policy.k} if isinstance(self.k_policy, FixedK) \
            else {"mode": "stabilized"}
        return {"model": model, "ns": list(self.ns), "reps": self.reps, "k_policy": k,
                "base_seed": self.base_seed, "outputs": None if self.outputs is None else str(self.outputs),
                "tol": self.tol, "max_iters": self.max_iters,
                "bw_b": self.bw_b.to_dict(), "bw_sigma": self.bw_sigma.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentPlan":
        d = dict(d)
        if isinstance(d.get("model"), dict):
            d["model"] = ModelSpec.from_dict(d["model"])
        k = d.pop("k_policy", None)
        if isinstance(k, dict):
            d["k_policy"] = FixedK(int(k["k"])) if k.get("mode") == "fixed" else Stabilized()
        elif isinstance(k, int):
            d["k_policy"] = FixedK(k)
        for key in ("bw_b", "bw_sigma"):
            if isinstance(d.get(key), dict):
                d[key] = BandwidthRule.from_dict(d[key])
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise InvalidInputError(f"unknown plan fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentPlan":
        return cls.from_dict(json.loads(Path(path).read_text()))


def run_replication(spec: ModelSpec, n: int, rep: int, cfg: BackfitConfig) -> ErrorReport:
    """Simulate stream ``(rep, n)`` of ``spec``, fit it and score the fit."""
    traj = simulate(spec, n, stream=(rep, n))
    result = run_backfit(traj, spec.p, cfg)
    return error_report(result, spec, rep=rep, n=n)


def _safe_replication(spec, n, rep, cfg):
    try:
        return run_replication(spec, n, rep, cfg)
    except Exception as exc:  # noqa: BLE001 - recorded and reported by the caller
        return f"{type(exc).__name__}: {exc}"


@dataclass
class RateTable:
    ns: tuple[int, ...]
    reports: list[ErrorReport]
    failures: list[tuple[int, int, str]] = field(default_factory=list)

    def for_n(self, n: int) -> list[ErrorReport]:
        return [r for r in self.reports if r.n == n]

    def rows(self) -> list[dict]:
        """Per-n arithmetic means of each error column."""
        out = []
        for n in self.ns:
            reps = self.for_n(n)
            row: dict = {"n": n, "count": len(reps)}
            if reps:
                M = np.array([r.row()[2:] for r in reps], dtype=float)
                row.update(zip(RATE_COLUMNS, M.mean(axis=0).tolist()))
            out.append(row)
        return out

    def column(self, name: str) -> np.ndarray:
        return np.array([row[name] for row in self.rows()])

    def slopes(self) -> dict[str, RateFit | None]:
        rows = [r for r in self.rows() if r["count"]]
        fits: dict[str, RateFit | None] = {}
        for col in RATE_COLUMNS[:-1]:
            ns = [r["n"] for r in rows]
            errs = [r[col] for r in rows]
            try:
                fits[col] = fit_rate(ns, errs)
            except InvalidInputError:
                fits[col] = None
        return fits

    def to_dict(self) -> dict:
        return {
            "ns": list(self.ns),
            "rows": self.rows(),
            "slopes": {k: None if v is None else {"slope": v.slope, "c_hat": v.c_hat}
                       for k, v in self.slopes().items()},
            "failures": [{"n": n, "rep": r, "error": msg} for n, r, msg in self.failures],
        }


def write_reports_csv(path, reports: Iterable[ErrorReport]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in reports:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r.row()])
    return path


def run_plan(plan: ExperimentPlan, workers: int | None = None) -> RateTable:
    """Run every (n, rep) replication of ``plan`` and aggregate.

    Writes ``reports.csv`` (one row per replication), ``rate_table.json``
    (averages, fitted slopes, failures) and ``rate_loglog.svg`` when
    ``plan.outputs`` is set. Failed replications are logged and excluded.
    """
    spec = plan.spec()
    cfg = plan.config()
    tasks = [(spec, n, rep, cfg) for n in plan.ns for rep in range(plan.reps)]
    outcomes = _map_ordered(_safe_replication, tasks, worker_count(workers))
    reports, failures = [], []
    for (_, n, rep, _), out in zip(tasks, outcomes):
        if isinstance(out, ErrorReport):
            reports.append(out)
        else:
            logger.warning("replication n=%d rep=%d failed: %s", n, rep, out)
            failures.append((n, rep, out))
    table = RateTable(plan.ns, reports, failures)
    if plan.outputs is not None:
        out = plan.outputs
        out.mkdir(parents=True, exist_ok=True)
        write_reports_csv(out / "reports.csv", reports)
        # the output location is left out so reruns elsewhere produce identical files
        plan_d = {k: v for k, v in plan.to_dict().items() if k != "outputs"}
        payload = {"plan": plan_d, **table.to_dict()}
        (out / "rate_table.json").write_text(json.dumps(payload, indent=2) + "\n")
        plot_rates(table, out / "rate_loglog.svg")
    return table


# --------------------------------------------------------------------------
# Stopping study
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class StopRecord:
    model: str
    n: int
    rep: int
    k_stop: int
    stabilized: bool


@dataclass
class StoppingTable:
    records: list[StopRecord]

    def k_values(self, model: str, n: int) -> list[int]:
        return [r.k_stop for r in self.records if r.model == model and r.n == n]

    def median(self, model: str, n: int) -> float:
        return float(np.median(self.k_values(model, n)))

    @property
    def models(self) -> list[str]:
        return list(dict.fromkeys(r.model for r in self.records))

    @property
    def ns(self) -> list[int]:
        return sorted({r.n for r in self.records})

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["model", "n", "rep", "k_stop", "stabilized"])
            for r in self.records:
                w.writerow([r.model, r.n, r.rep, r.k_stop, int(r.stabilized)])
        return path


def _stop_replication(model: str, spec: ModelSpec, n: int, rep: int, cfg: BackfitConfig) -> StopRecord:
    traj = simulate(spec, n, stream=(rep, n))
    res = run_backfit(traj, spec.p, cfg)
    return StopRecord(model, n, rep, res.k_stop, bool(res.stabilized))


def stopping_study(models: Sequence[str], ns: Sequence[int], reps: int, tol: float = 1e-3, *,
                   base_seed: int = 0, max_iters: int = 500, outputs=None,
                   workers: int | None = None) -> StoppingTable:
    """Stabilised stopping index k(n) per model, n and replication.

    Replication ``rep`` at size ``n`` draws the same random stream for every
    model, so models are compared at matched seeds.
    """
    if reps < 1:
        raise InvalidInputError("reps must be >= 1")
    cfg = BackfitConfig(stop_mode=Stabilized(), tol=tol, max_iters=max_iters)
    tasks = []
    for m in models:
        spec = resolve_model(m, base_seed)
        tasks += [(m, spec, int(n), rep, cfg) for n in ns for rep in range(reps)]
    table = StoppingTable(_map_ordered(_stop_replication, tasks, worker_count(workers)))
    if outputs is not None:
        outputs = Path(outputs)
        table.to_csv(outputs / "stopping.csv")
        plot_stopping(table, outputs / "stopping.svg")
    return table


def parse_ns(text: str) -> tuple[int, ...]:
    """``"200,500,1000"`` or ``"start:stop:step"`` (stop inclusive)."""
    text = text.strip()
    if ":" in text:
        parts = [int(v) for v in text.split(":")]
        if len(parts) != 3 or parts[2] <= 0:
            raise InvalidInputError(f"bad range {text!r}; expected start:stop:step")
        return tuple(range(parts[0], parts[1] + 1, parts[2]))
    return tuple(int(v) for v in text.split(",") if v.strip())


# --------------------------------------------------------------------------
# Plots
# --------------------------------------------------------------------------


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    matplotlib.rcParams["svg.hashsalt"] = "plar"
    return plt


def plot_rates(table: RateTable, path) -> Path:
    """Log-log error panels with reference curves c (ln n / n)^(1/4)."""
    plt = _pyplot()
    rows = [r for r in table.rows() if r["count"]]
    ns = np.array([r["n"] for r in rows], dtype=float)
    panels = [
        ("theta", ["theta_err"]),
        ("b", ["b_N1", "b_N2", "b_Ninf"]),
        ("sigma^2", ["s_N1", "s_N2", "s_Ninf"]),
        ("noise law", ["tv", "hellinger", "ks"]),
    ]
    fig, axes = plt.subplots(2, 2, figsize=(9, 7))
    ref = (np.log(ns) / ns) ** 0.25 if ns.size else ns
    for ax, (title, cols) in zip(axes.ravel(), panels):
        for col in cols:
            y = np.array([r[col] for r in rows])
            ax.plot(ns, y, marker="o", label=col)
        if ns.size:
            base = [r[cols[0]] for r in rows]
            c0 = math.exp(np.mean(np.log(np.maximum(base, 1e-300)) - np.log(ref)))
            for f in (0.5, 2 ** -0.5, 1.0, 2 ** 0.5, 2.0):
                ax.plot(ns, c0 * f * ref, color="0.7", lw=0.8, ls="--")
        ax.set_xscale("log")
        ax.set_yscale("log")
        ax.set_title(title)
        ax.set_xlabel("n")
        ax.legend(fontsize=7)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def plot_stopping(table: StoppingTable, path) -> Path:
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4.5))
    colors = {"plus": "tab:red", "minus": "tab:blue", "ar4": "tab:green"}
    reps = sorted({r.rep for r in table.records})
    for m in table.models:
        for rep in reps:
            pts = sorted((r.n, r.k_stop) for r in table.records if r.model == m and r.rep == rep)
            if pts:
                x, y = zip(*pts)
                ax.plot(x, y, color=colors.get(m), lw=0.9, label=m if rep == reps[0] else None)
    ax.set_xlabel("n")
    ax.set_ylabel("k(n)")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path
