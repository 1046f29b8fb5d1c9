"""Generative partially linear AR model with periodic exogenous input.

    X_t = a_1 X_{t-1} + ... + a_p X_{t-p} + b(e_t) + sigma(e_t) eps_t
    e_t = s_{t mod T} + eta_t

The input e is periodically correlated through the deterministic cycle s; the
output X inherits the periodic structure, so the T-blocked vector sequence is
stationary once the AR part is stable.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import signal, stats

from .errors import InvalidInputError, StabilityError
from .kernel import Domain

#: Minimum burn-in length; the actual default also depends on the slowest root.
MIN_BURN_IN = 500
#: Relative weight of the initial state left after burn-in.
BURN_IN_RESIDUAL = 1e-12


# --------------------------------------------------------------------------
# Symbolic functions
# --------------------------------------------------------------------------

_FN_KINDS = ("SqrtAbs", "QuadraticAffine", "Constant", "PiecewiseLinear", "Zero")


@dataclass(frozen=True)
class SymbolicFn:
    """Closed-form scalar function used for b and sigma.

    kinds and their ``params``:

    * ``SqrtAbs``          ()                    sqrt(|e|)
    * ``QuadraticAffine``  (c0, c2)              c0 + c2 e^2
    * ``Constant``         (c,)                  c
    * ``PiecewiseLinear``  (x0, y0, x1, y1, ...) linear interpolation, flat outside
    * ``Zero``             ()                    0
    """

    kind: str
    params: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in _FN_KINDS:
            raise InvalidInputError(f"unknown function kind {self.kind!r}")
        params = tuple(float(v) for v in self.params)
        object.__setattr__(self, "params", params)
        expected = {"SqrtAbs": 0, "QuadraticAffine": 2, "Constant": 1, "Zero": 0}
        if self.kind in expected and len(params) != expected[self.kind]:
            raise InvalidInputError(f"{self.kind} takes {expected[self.kind]} parameters")
        if self.kind == "PiecewiseLinear":
            if len(params) < 4 or len(params) % 2:
                raise InvalidInputError("PiecewiseLinear needs at least two (x, y) knots")
            if np.any(np.diff(params[0::2]) <= 0):
                raise InvalidInputError("PiecewiseLinear knots must be strictly increasing")
        if not all(math.isfinite(v) for v in params):
            raise InvalidInputError("function parameters must be finite")

    @classmethod
    def sqrt_abs(cls) -> "SymbolicFn":
        return cls("SqrtAbs")

    @classmethod
    def quadratic_affine(cls, c0: float, c2: float) -> "SymbolicFn":
        return cls("QuadraticAffine", (c0, c2))

    @classmethod
    def constant(cls, c: float) -> "SymbolicFn":
        return cls("Constant", (c,))

    @classmethod
    def piecewise_linear(cls, knots: Sequence[tuple[float, float]]) -> "SymbolicFn":
        return cls("PiecewiseLinear", tuple(v for xy in knots for v in xy))

    @classmethod
    def zero(cls) -> "SymbolicFn":
        return cls("Zero")

    @property
    def holder_exponent(self) -> float:
        """Declared Hoelder exponent on compact sets."""
        return 0.5 if self.kind == "SqrtAbs" else 1.0

    def __call__(self, e):
        e = np.asarray(e, dtype=float)
        k, c = self.kind, self.params
        if k == "SqrtAbs":
            out = np.sqrt(np.abs(e))
        elif k == "QuadraticAffine":
            out = c[0] + c[1] * e * e
        elif k == "Constant":
            out = np.full_like(e, c[0])
        elif k == "Zero":
            out = np.zeros_like(e)
        else:
            out = np.interp(e, c[0::2], c[1::2])
        return float(out) if out.ndim == 0 else out

    def infimum(self, domain: Domain) -> float:
        """Minimum over ``domain``; exact for every supported kind."""
        cands = []
        for lo, hi in domain.intervals:
            pts = [lo, hi]
            if lo < 0 < hi:
                pts.append(0.0)
            if self.kind == "PiecewiseLinear":
                pts += [x for x in self.params[0::2] if lo < x < hi]
            cands.append(np.min(self(np.array(pts))))
        return float(min(cands))

    def supremum_abs(self, domain: Domain) -> float:
        cands = []
        for lo, hi in domain.intervals:
            pts = [lo, hi] + ([0.0] if lo < 0 < hi else [])
            if self.kind == "PiecewiseLinear":
                pts += [x for x in self.params[0::2] if lo < x < hi]
            cands.append(np.max(np.abs(self(np.array(pts)))))
        return float(max(cands))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": list(self.params)}

    @classmethod
    def from_dict(cls, d: dict) -> "SymbolicFn":
        return cls(d["kind"], tuple(d.get("params", ())))


# --------------------------------------------------------------------------
# Noise laws
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class NoiseLaw:
    """Zero-mean noise distribution.

    * ``uniform``             uniform on [-scale, scale]
    * ``gaussian``            N(0, scale^2)
    * ``truncated_gaussian``  N(0, 1) truncated to [-bound, bound], rescaled to sd ``scale``
    """

    kind: str
    scale: float = 1.0
    bound: float | None = None

    def __post_init__(self):
        if self.kind not in ("uniform", "gaussian", "truncated_gaussian"):
            raise InvalidInputError(f"unknown noise law {self.kind!r}")
        if not self.scale > 0:
            raise InvalidInputError("noise scale must be positive")
        if self.kind == "truncated_gaussian" and not (self.bound and self.bound > 0):
            raise InvalidInputError("truncated_gaussian needs a positive bound")

    @classmethod
    def uniform(cls, half_width: float) -> "NoiseLaw":
        return cls("uniform", half_width)

    @classmethod
    def gaussian(cls, sd: float = 1.0) -> "NoiseLaw":
        return cls("gaussian", sd)

    @classmethod
    def truncated_gaussian(cls, bound: float = 8.0, sd: float = 1.0) -> "NoiseLaw":
        return cls("truncated_gaussian", sd, bound)

    @property
    def support_half_width(self) -> float:
        """Half width of the support; ``inf`` when unbounded."""
        if self.kind == "uniform":
            return self.scale
        if self.kind == "truncated_gaussian":
            return self.bound * self.scale / self._truncated_sd
        return math.inf

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.support_half_width)

    @property
    def variance(self) -> float:
        if self.kind == "uniform":
            return self.scale ** 2 / 3.0
        return self.scale ** 2

    @property
    def _truncated_sd(self) -> float:
        return float(stats.truncnorm.std(-self.bound, self.bound))

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "uniform":
            return rng.uniform(-self.scale, self.scale, size)
        if self.kind == "gaussian":
            return self.scale * rng.standard_normal(size)
        out = rng.standard_normal(size)
        bad = np.abs(out) > self.bound
        while bad.any():
            out[bad] = rng.standard_normal(int(bad.sum()))
            bad = np.abs(out) > self.bound
        return out * (self.scale / self._truncated_sd)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseLaw":
        return cls(d["kind"], float(d.get("scale", 1.0)), d.get("bound"))


# --------------------------------------------------------------------------
# Model specification
# --------------------------------------------------------------------------


def make_rng(seed: int, *stream: int) -> np.random.Generator:
    """Philox generator keyed by ``seed`` and an optional stream path.

    Distinct stream tuples (e.g. ``(replication, n)``) give independent,
    replayable sequences.
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, stream)])))


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Full generative description of a model and its noise."""

    theta: np.ndarray
    b_fn: SymbolicFn
    sigma_fn: SymbolicFn
    seasonal_s: np.ndarray
    eta_law: NoiseLaw = field(default_factory=lambda: NoiseLaw.uniform(3.0))
    eps_law: NoiseLaw = field(default_factory=NoiseLaw.gaussian)
    seed: int = 0

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float).ravel()
        s = np.array(self.seasonal_s, dtype=float).ravel()
        if theta.size == 0:
            raise InvalidInputError("theta must be non-empty")
        if not np.all(np.isfinite(theta)):
            raise InvalidInputError("theta must be finite")
        if s.size == 0 or not np.all(np.isfinite(s)):
            raise InvalidInputError("seasonal_s must be a non-empty finite vector")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise InvalidInputError("seed must be a 64-bit unsigned integer")
        theta.flags.writeable = False
        s.flags.writeable = False
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "seasonal_s", s)
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def p(self) -> int:
        return int(self.theta.size)

    @property
    def period_T(self) -> int:
        return int(self.seasonal_s.size)

    @property
    def domain(self) -> Domain:
        """Union of the supports of e_t over one period."""
        return Domain.from_centers(self.seasonal_s, self.eta_law.support_half_width)

    def with_seed(self, seed: int) -> "ModelSpec":
        return ModelSpec(self.theta, self.b_fn, self.sigma_fn, self.seasonal_s,
                         self.eta_law, self.eps_law, seed)

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "theta": self.theta.tolist(),
            "b_fn": self.b_fn.to_dict(),
            "sigma_fn": self.sigma_fn.to_dict(),
            "period_T": self.period_T,
            "seasonal_s": self.seasonal_s.tolist(),
            "eta_law": self.eta_law.to_dict(),
            "eps_law": self.eps_law.to_dict(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        spec = cls(
            theta=d["theta"],
            b_fn=SymbolicFn.from_dict(d["b_fn"]),
            sigma_fn=SymbolicFn.from_dict(d["sigma_fn"]),
            seasonal_s=d["seasonal_s"],
            eta_law=NoiseLaw.from_dict(d["eta_law"]),
            eps_law=NoiseLaw.from_dict(d["eps_law"]),
            seed=int(d.get("seed", 0)),
        )
        if "p" in d and int(d["p"]) != spec.p:
            raise InvalidInputError(f"p = {d['p']} but theta has {spec.p} entries")
        if "period_T" in d and int(d["period_T"]) != spec.period_T:
            raise InvalidInputError(f"period_T = {d['period_T']} but seasonal_s has {spec.period_T} entries")
        return spec

    def to_json(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        return path

    @classmethod
    def from_json(cls, path) -> "ModelSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def check_stability(theta) -> tuple[bool, np.ndarray]:
    """Roots of A(z) = z^p - sum_j a_j z^(p-j) and whether all lie inside |z| < 1."""
    theta = np.asarray(theta, dtype=float).ravel()
    if theta.size == 0:
        raise InvalidInputError("theta must be non-empty")
    if not np.all(np.isfinite(theta)):
        raise InvalidInputError("theta has non-finite entries")
    roots = np.roots(np.concatenate(([1.0], -theta)))
    if roots.size < theta.size:
        # np.roots drops leading-zero roots when a_p == 0
        roots = np.concatenate((roots, np.zeros(theta.size - roots.size)))
    return bool(np.max(np.abs(roots)) < 1.0), roots.astype(complex)


def coeffs_from_roots(roots) -> np.ndarray:
    """AR coefficients (a_1..a_p) with z^p - sum a_j z^(p-j) = prod (z - r_i).

    Complex roots must come in conjugate pairs; the result is real.
    """
    roots = np.asarray(roots).ravel()
    if roots.size == 0:
        raise InvalidInputError("need at least one root")
    poly = np.poly(roots)
    if np.iscomplexobj(poly):
        if np.max(np.abs(poly.imag)) > 1e-12:
            raise InvalidInputError("complex roots must come in conjugate pairs")
        poly = poly.real
    return -poly[1:]


def check_hypotheses(spec: ModelSpec) -> dict[str, bool]:
    """Which model hypotheses hold for ``spec``.

    Keys: ``stable`` (AR roots inside the unit disc), ``eta_bounded_zero_mean``,
    ``eps_unit_variance``, ``eps_bounded``, ``sigma_positive`` (inf of sigma over
    the input domain > 0), ``period_consistent``.
    """
    stable, _ = check_stability(spec.theta)
    return {
        "stable": stable,
        "eta_bounded_zero_mean": spec.eta_law.bounded,
        "eps_unit_variance": abs(spec.eps_law.variance - 1.0) < 1e-12,
        "eps_bounded": spec.eps_law.bounded,
        "sigma_positive": spec.eta_law.bounded and spec.sigma_fn.infimum(spec.domain) > 0,
        "period_consistent": spec.seasonal_s.size == spec.period_T,
    }


def default_burn_in(theta) -> int:
    _, roots = check_stability(theta)
    rho = float(np.max(np.abs(roots)))
    if rho <= 0.0:
        return MIN_BURN_IN
    return max(MIN_BURN_IN, math.ceil(math.log(BURN_IN_RESIDUAL) / math.log(rho)))


# --------------------------------------------------------------------------
# Trajectories
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Observed pairs (X_t, e_t) for t = 1..n."""

    x: np.ndarray
    e: np.ndarray
    truth: ModelSpec | None = None
    seed_used: int | None = None
    stream: tuple[int, ...] = ()

    def __post_init__(self):
        x = np.array(self.x, dtype=float).ravel()
        e = np.array(self.e, dtype=float).ravel()
        if x.shape != e.shape:
            raise InvalidInputError(f"x has {x.size} values but e has {e.size}")
        if self.truth is not None:
            if x.size <= self.truth.p:
                raise InvalidInputError("trajectory must be longer than the AR order")
            if self.truth.eta_law.bounded and not np.all(self.truth.domain.contains(e, atol=1e-9)):
                raise InvalidInputError("inputs fall outside the model's input domain")
        x.flags.writeable = False
        e.flags.writeable = False
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "e", e)

    @property
    def n(self) -> int:
        return int(self.x.size)

    def head(self, n: int) -> "Trajectory":
        return Trajectory(self.x[:n], self.e[:n], self.truth, self.seed_used, self.stream)

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "x", "e"])
            for t, (xv, ev) in enumerate(zip(self.x, self.e), start=1):
                w.writerow([t, repr(float(xv)), repr(float(ev))])
        return path

    @classmethod
    def from_csv(cls, path) -> "Trajectory":
        with Path(path).open(newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"x", "e"} <= set(reader.fieldnames):
                raise InvalidInputError(f"{path}: expected columns t,x,e")
            rows = list(reader)
        if not rows:
            raise InvalidInputError(f"{path}: no data rows")
        return cls([float(r["x"]) for r in rows], [float(r["e"]) for r in rows])


def simulate(spec: ModelSpec, n: int, burn_in: int | None = None, *,
             stream: Sequence[int] = (), x0=None) -> Trajectory:
    """Draw a trajectory of length ``n`` from ``spec``.

    The generator is keyed by ``(spec.seed, *stream)``. Time runs from
    ``1 - burn_in`` to ``n`` so that the returned sample starts at t = 1 with
    e_t = s_{t mod T} + eta_t. ``x0`` gives the p values preceding the first
    simulated step, most recent first (zeros by default).
    """
    if n <= spec.p:
        raise InvalidInputError(f"n = {n} must exceed the AR order p = {spec.p}")
    stable, roots = check_stability(spec.theta)
    if not stable:
        raise StabilityError(f"AR polynomial has a root of modulus {np.max(np.abs(roots)):.6g} >= 1")
    if burn_in is None:
        burn_in = default_burn_in(spec.theta)
    if burn_in < 0:
        raise InvalidInputError("burn_in must be non-negative")

    total = burn_in + n
    rng = make_rng(spec.seed, *stream)
    eta = spec.eta_law.sample(rng, total)
    eps = spec.eps_law.sample(rng, total)
    t = np.arange(1 - burn_in, n + 1)
    e = spec.seasonal_s[t % spec.period_T] + eta
    u = spec.b_fn(e) + spec.sigma_fn(e) * eps

    a = np.concatenate(([1.0], -spec.theta))
    if x0 is None:
        zi = np.zeros(spec.p)
    else:
        x0 = np.asarray(x0, dtype=float).ravel()
        if x0.size != spec.p:
            raise InvalidInputError(f"x0 needs {spec.p} values")
        zi = signal.lfiltic([1.0], a, x0)
    x, _ = signal.lfilter([1.0], a, u, zi=zi)
    return Trajectory(x[burn_in:], e[burn_in:], spec, spec.seed, tuple(int(s) for s in stream))
