"""Kernels, bandwidth rules and the Nadaraya-Watson smoother.

Every estimation step of the backfitting scheme reduces to a Nadaraya-Watson
(NW) ratio

    f_hat(e0) = sum_l r_l K((e0 - e_l) / h) / sum_l K((e0 - e_l) / h)

so this module exposes a single vectorised primitive, :func:`nw_smooth`, that
applies the smoother to several response columns at once. Since NW is linear in
the responses, the backfitting loop can precompute the smoothed design once and
iterate in O(n p) per step.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DegenerateInputError, InvalidInputError

#: Below this kernel mass the NW ratio falls back to the nearest design point.
DENOMINATOR_GUARD = 1e-12
#: Points per connected component of an evaluation grid.
GRID_POINTS = 200
# Kernel-matrix entries materialised per chunk (~32 MB of float64).
_CHUNK_ENTRIES = 4_000_000

_SQRT_2PI = math.sqrt(2.0 * math.pi)


# --------------------------------------------------------------------------
# Domains
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Domain:
    """Finite union of disjoint closed intervals, stored sorted and merged."""

    intervals: tuple[tuple[float, float], ...]

    def __post_init__(self):
        ivs = sorted((float(a), float(b)) for a, b in self.intervals)
        if not ivs:
            raise InvalidInputError("domain needs at least one interval")
        merged: list[list[float]] = []
        for lo, hi in ivs:
            if not (np.isfinite(lo) and np.isfinite(hi)) or hi < lo:
                raise InvalidInputError(f"invalid interval [{lo}, {hi}]")
            if merged and lo <= merged[-1][1]:
                merged[-1][1] = max(merged[-1][1], hi)
            else:
                merged.append([lo, hi])
        object.__setattr__(self, "intervals", tuple((a, b) for a, b in merged))

    @classmethod
    def interval(cls, lo: float, hi: float) -> "Domain":
        return cls(((lo, hi),))

    @classmethod
    def from_centers(cls, centers: Sequence[float], half_width: float) -> "Domain":
        """Union of ``[c - half_width, c + half_width]`` over ``centers``."""
        return cls(tuple((c - half_width, c + half_width) for c in centers))

    @classmethod
    def from_data(cls, e: np.ndarray) -> "Domain":
        e = np.asarray(e, dtype=float)
        return cls.interval(float(e.min()), float(e.max()))

    @property
    def length(self) -> float:
        return float(sum(b - a for a, b in self.intervals))

    def contains(self, e, atol: float = 1e-12) -> np.ndarray:
        e = np.asarray(e, dtype=float)
        inside = np.zeros(e.shape, dtype=bool)
        for lo, hi in self.intervals:
            inside |= (e >= lo - atol) & (e <= hi + atol)
        return inside

    def component_grids(self, points: int = GRID_POINTS) -> list[np.ndarray]:
        return [np.linspace(lo, hi, points) for lo, hi in self.intervals]

    def grid(self, points: int = GRID_POINTS) -> np.ndarray:
        """Equally spaced evaluation points, ``points`` per component."""
        return np.concatenate(self.component_grids(points))

    def integrate(self, values: np.ndarray, points: int = GRID_POINTS) -> float:
        """Trapezoid integral of values sampled on :meth:`grid`."""
        values = np.asarray(values, dtype=float)
        total = 0.0
        for i, g in enumerate(self.component_grids(points)):
            total += float(np.trapezoid(values[i * points:(i + 1) * points], g))
        return total

    def to_list(self) -> list[list[float]]:
        return [[a, b] for a, b in self.intervals]


# --------------------------------------------------------------------------
# Kernels
# --------------------------------------------------------------------------


def _gaussian_moment(k: int) -> float:
    """E[U^k] for U ~ N(0, 1)."""
    if k % 2:
        return 0.0
    return float(np.prod(np.arange(k - 1, 0, -2))) if k else 1.0


@lru_cache(maxsize=None)
def higher_order_coefficients(order: int) -> tuple[float, ...]:
    """Coefficients c_j of K(u) = phi(u) * sum_j c_j u^(2j).

    They solve int u^k K(u) du = [k == 0] for k = 0..order. Odd moments vanish by
    symmetry, so only the even ones enter the linear system.
    """
    if order < 2:
        raise InvalidInputError(f"higher-order kernel needs order >= 2, got {order}")
    m = order // 2
    M = np.array([[_gaussian_moment(2 * i + 2 * j) for j in range(m + 1)] for i in range(m + 1)])
    rhs = np.zeros(m + 1)
    rhs[0] = 1.0
    return tuple(float(c) for c in np.linalg.solve(M, rhs))


@dataclass(frozen=True)
class KernelKind:
    """A smoothing kernel K with int K = 1.

    ``name`` is ``"gaussian"``, ``"epanechnikov"`` or ``"higher_order"``; the
    latter uses ``order`` (the number of vanishing moments).
    """

    name: str = "gaussian"
    order: int = 2

    def __post_init__(self):
        if self.name not in ("gaussian", "epanechnikov", "higher_order"):
            raise InvalidInputError(f"unknown kernel {self.name!r}")
        if self.name == "higher_order":
            higher_order_coefficients(self.order)

    @classmethod
    def gaussian(cls) -> "KernelKind":
        return cls("gaussian")

    @classmethod
    def epanechnikov(cls) -> "KernelKind":
        return cls("epanechnikov")

    @classmethod
    def higher_order(cls, order: int) -> "KernelKind":
        return cls("higher_order", order)

    @property
    def compact(self) -> bool:
        return self.name == "epanechnikov"

    def __call__(self, u):
        return kernel_eval(self, u)

    def to_dict(self) -> dict:
        d: dict = {"name": self.name}
        if self.name == "higher_order":
            d["order"] = self.order
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "KernelKind":
        return cls(d["name"], int(d.get("order", 2)))


def kernel_eval(kind: KernelKind, u):
    """Evaluate K(u) elementwise. Returns a float for scalar input."""
    u = np.asarray(u, dtype=float)
    if kind.name == "gaussian":
        out = np.exp(-0.5 * u * u) / _SQRT_2PI
    elif kind.name == "epanechnikov":
        out = np.where(np.abs(u) <= 1.0, 0.75 * (1.0 - u * u), 0.0)
    else:
        u2 = u * u
        poly = np.zeros_like(u)
        for c in reversed(higher_order_coefficients(kind.order)):
            poly = poly * u2 + c
        out = poly * np.exp(-0.5 * u2) / _SQRT_2PI
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# Bandwidths
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class BandwidthRule:
    """How to choose the smoothing parameter h_n.

    kinds:
      ``default_b``          h = 1.5 * S_e * n^(-1/2)
      ``default_sigma``      h = 0.15 * S_e * n^(-1/3)
      ``theoretical``        h = (ln n / n)^(1 / (2 gamma + 1)), value = gamma
      ``theoretical_smooth`` h = (ln n / n)^(1 / (2 l + 1)),     value = l
      ``explicit``           h = value
    """

    kind: str
    value: float | None = None

    def __post_init__(self):
        if self.kind not in ("default_b", "default_sigma", "theoretical", "theoretical_smooth", "explicit"):
            raise InvalidInputError(f"unknown bandwidth rule {self.kind!r}")
        if self.kind in ("theoretical", "theoretical_smooth", "explicit"):
            if self.value is None or not self.value > 0:
                raise InvalidInputError(f"{self.kind} bandwidth needs a positive value")
        if self.kind == "theoretical" and self.value > 1:
            raise InvalidInputError("Hoelder exponent must lie in (0, 1]")

    @classmethod
    def default_b(cls) -> "BandwidthRule":
        return cls("default_b")

    @classmethod
    def default_sigma(cls) -> "BandwidthRule":
        return cls("default_sigma")

    @classmethod
    def theoretical(cls, gamma: float) -> "BandwidthRule":
        return cls("theoretical", gamma)

    @classmethod
    def theoretical_smooth(cls, ell: int) -> "BandwidthRule":
        return cls("theoretical_smooth", float(ell))

    @classmethod
    def explicit(cls, h: float) -> "BandwidthRule":
        return cls("explicit", h)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "value": self.value}

    @classmethod
    def from_dict(cls, d: dict) -> "BandwidthRule":
        return cls(d["kind"], d.get("value"))


def bandwidth(rule: BandwidthRule, n: int, e=None) -> float:
    """Smoothing parameter for sample size ``n``.

    The data-dependent rules scale with the sample standard deviation of ``e``
    (``ddof=1``).
    """
    if n < 2:
        raise InvalidInputError(f"bandwidth needs n >= 2, got {n}")
    if rule.kind == "explicit":
        return float(rule.value)
    if rule.kind in ("theoretical", "theoretical_smooth"):
        return float((math.log(n) / n) ** (1.0 / (2.0 * rule.value + 1.0)))
    if e is None or len(e) < 2:
        raise InvalidInputError(f"{rule.kind} bandwidth needs at least two inputs e")
    s_e = float(np.std(np.asarray(e, dtype=float), ddof=1))
    if not s_e > 0:
        raise DegenerateInputError("exogenous inputs have zero variance")
    if rule.kind == "default_b":
        return 1.5 * s_e * n ** -0.5
    return 0.15 * s_e * n ** (-1.0 / 3.0)


# --------------------------------------------------------------------------
# Nadaraya-Watson
# --------------------------------------------------------------------------


def nw_smooth(e_eval, e, responses, kernel: KernelKind, h: float) -> np.ndarray:
    """NW estimates at ``e_eval`` for each column of ``responses``.

    Parameters
    ----------
    e_eval : array of shape (m,)
        Evaluation points.
    e : array of shape (n,)
        Design points.
    responses : array of shape (n,) or (n, q)
    kernel, h
        Kernel and bandwidth.

    Returns
    -------
    array of shape (m,) or (m, q), matching the dimensionality of ``responses``.
    Rows whose kernel mass is below :data:`DENOMINATOR_GUARD` take the response
    of the nearest design point instead.
    """
    e_eval = np.atleast_1d(np.asarray(e_eval, dtype=float))
    e = np.asarray(e, dtype=float)
    R = np.asarray(responses, dtype=float)
    vector = R.ndim == 1
    if vector:
        R = R[:, None]
    if R.shape[0] != e.shape[0]:
        raise InvalidInputError(f"{e.shape[0]} design points but {R.shape[0]} responses")
    if e.shape[0] == 0:
        raise InvalidInputError("no design points")
    if not h > 0:
        raise InvalidInputError(f"bandwidth must be positive, got {h}")

    m, n = e_eval.shape[0], e.shape[0]
    out = np.empty((m, R.shape[1]))
    den = np.empty(m)
    step = max(1, _CHUNK_ENTRIES // n)
    for start in range(0, m, step):
        stop = min(m, start + step)
        K = kernel_eval(kernel, (e_eval[start:stop, None] - e[None, :]) / h)
        den[start:stop] = K.sum(axis=1)
        out[start:stop] = K @ R

    bad = den < DENOMINATOR_GUARD
    ok = ~bad
    out[ok] /= den[ok, None]
    if bad.any():
        out[bad] = R[_nearest(e, e_eval[bad])]
    return out[:, 0] if vector else out


def _nearest(e: np.ndarray, q: np.ndarray) -> np.ndarray:
    order = np.argsort(e, kind="stable")
    es = e[order]
    pos = np.searchsorted(es, q)
    lo = np.clip(pos - 1, 0, es.size - 1)
    hi = np.clip(pos, 0, es.size - 1)
    return order[np.where(np.abs(q - es[lo]) <= np.abs(es[hi] - q), lo, hi)]


@dataclass(frozen=True, eq=False)
class FunctionEstimate:
    """Evaluable NW estimate: design points, responses, bandwidth and kernel.

    ``floor`` optionally clamps evaluations from below (used for variances).
    """

    sample_e: np.ndarray
    sample_r: np.ndarray
    bandwidth: float
    kernel: KernelKind = field(default_factory=KernelKind.gaussian)
    domain: Domain | None = None
    floor: float | None = None

    def __post_init__(self):
        se = np.array(self.sample_e, dtype=float)
        sr = np.array(self.sample_r, dtype=float)
        if se.ndim != 1 or se.shape != sr.shape:
            raise InvalidInputError("sample_e and sample_r must be 1-d arrays of equal length")
        if se.size < 1:
            raise InvalidInputError("a function estimate needs at least one sample")
        if not self.bandwidth > 0:
            raise InvalidInputError("bandwidth must be positive")
        se.flags.writeable = False
        sr.flags.writeable = False
        object.__setattr__(self, "sample_e", se)
        object.__setattr__(self, "sample_r", sr)
        if self.domain is None:
            object.__setattr__(self, "domain", Domain.from_data(se))

    def __call__(self, e0):
        return nw_eval(self, e0)

    def grid_values(self, points: int = GRID_POINTS) -> tuple[np.ndarray, np.ndarray]:
        g = self.domain.grid(points)
        return g, nw_eval(self, g)

    def to_csv(self, path, points: int = GRID_POINTS) -> Path:
        g, v = self.grid_values(points)
        return write_grid_csv(path, g, v)


def nw_fit(e, r, kernel: KernelKind, h: float, domain: Domain | None = None) -> FunctionEstimate:
    """Store the sample for later NW evaluation."""
    e = np.asarray(e, dtype=float)
    r = np.asarray(r, dtype=float)
    if e.shape != r.shape:
        raise InvalidInputError(f"length mismatch: {e.shape} vs {r.shape}")
    return FunctionEstimate(e, r, float(h), kernel, domain)


def nw_eval(fe: FunctionEstimate, e0):
    """Evaluate ``fe`` at a point or array of points."""
    scalar = np.ndim(e0) == 0
    v = nw_smooth(np.atleast_1d(e0), fe.sample_e, fe.sample_r, fe.kernel, fe.bandwidth)
    if fe.floor is not None:
        v = np.maximum(v, fe.floor)
    return float(v[0]) if scalar else v


def write_grid_csv(path, grid: np.ndarray, values: np.ndarray) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["e", "value"])
        for g, v in zip(grid, values):
            w.writerow([repr(float(g)), repr(float(v))])
    return path

