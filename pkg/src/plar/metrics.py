"""Error norms, residual-distribution distances and rate fitting."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import special

from .errors import InsufficientDataError, InvalidInputError
from .kernel import GRID_POINTS, Domain

REPORT_COLUMNS = ("n", "rep", "theta_err", "b_N1", "b_N2", "b_Ninf",
                  "s_N1", "s_N2", "s_Ninf", "tv", "hellinger", "ks", "k_stop")

#: Grid on which residual densities are compared with N(0, 1).
DENSITY_GRID = np.linspace(-6.0, 6.0, 1201)
MIN_RESIDUALS = 50


def grid_norms(values, domain: Domain, points: int = GRID_POINTS) -> tuple[float, float, float]:
    """(N1, N2, Ninf) of a function sampled on ``domain.grid(points)``.

    With d the total length of the domain::

        N1 = d^(-1/2) int |h|,   N2 = (int h^2)^(1/2),   Ninf = d^(1/2) sup |h|

    Integrals use the trapezoid rule, whose weights sum to d; Cauchy-Schwarz
    then gives N1 <= N2 <= Ninf for the discrete values as well.
    """
    h = np.asarray(values, dtype=float)
    d = domain.length
    if not d > 0:
        raise InvalidInputError("domain has zero length")
    n1 = domain.integrate(np.abs(h), points) / math.sqrt(d)
    n2 = math.sqrt(domain.integrate(h * h, points))
    ninf = math.sqrt(d) * float(np.max(np.abs(h)))
    return n1, n2, ninf


def fn_norms(est: Callable, truth: Callable, domain: Domain,
             points: int = GRID_POINTS) -> tuple[float, float, float]:
    """Norm trio of ``est - truth`` on the evaluation grid of ``domain``."""
    if domain is None or not domain.length > 0:
        raise InvalidInputError("fn_norms needs a domain of positive length")
    g = domain.grid(points)
    return grid_norms(np.asarray(est(g)) - np.asarray(truth(g)), domain, points)


def _kde_cdf(x: np.ndarray, r: np.ndarray, h: float) -> np.ndarray:
    if h == 0.0:
        return np.searchsorted(np.sort(r), x, side="right") / r.size
    out = np.empty_like(x)
    step = max(1, 2_000_000 // r.size)
    for i in range(0, x.size, step):
        out[i:i + step] = special.ndtr((x[i:i + step, None] - r[None, :]) / h).mean(axis=1)
    return out


def noise_distances(std_residuals) -> tuple[float, float, float]:
    """(TV, Hellinger, Kolmogorov) between the residual law and N(0, 1).

    The residual law is a Gaussian KDE with bandwidth 1.06 sd m^(-1/5). All three
    distances compare the same two distributions, discretised on the cells of
    :data:`DENSITY_GRID` (plus the two unbounded tail cells), using exact CDF
    increments. Zero-spread residuals are treated as a point mass.
    """
    r = np.asarray(std_residuals, dtype=float).ravel()
    if r.size < MIN_RESIDUALS:
        raise InsufficientDataError(f"need at least {MIN_RESIDUALS} residuals, got {r.size}")
    sd = float(np.std(r, ddof=1))
    h = 1.06 * sd * r.size ** -0.2
    x = DENSITY_GRID
    F = _kde_cdf(x, r, h)
    G = special.ndtr(x)
    p = np.diff(np.concatenate(([0.0], F, [1.0])))
    q = np.diff(np.concatenate(([0.0], G, [1.0])))
    p = np.clip(p, 0.0, None)
    q = np.clip(q, 0.0, None)
    tv = 0.5 * float(np.sum(np.abs(p - q)))
    hel = math.sqrt(0.5 * float(np.sum((np.sqrt(p) - np.sqrt(q)) ** 2)))
    ks = float(np.max(np.abs(F - G)))
    return min(tv, 1.0), min(hel, 1.0), ks


@dataclass(frozen=True)
class RateFit:
    slope: float
    c_hat: float


def fit_rate(ns: Sequence[int], errors: Sequence[float]) -> RateFit:
    """Least-squares fit of log(error) = log(c) + slope * log(ln n / n)."""
    ns = np.asarray(ns, dtype=float)
    err = np.asarray(errors, dtype=float)
    if ns.shape != err.shape:
        raise InvalidInputError("ns and errors must have the same length")
    if np.unique(ns).size < 4:
        raise InvalidInputError("fit_rate needs at least 4 distinct sample sizes")
    if np.any(ns < 2):
        raise InvalidInputError("sample sizes must be >= 2")
    if not np.all(err > 0):
        raise InvalidInputError("errors must be positive")
    X = np.log(np.log(ns) / ns)
    design = np.column_stack([np.ones_like(X), X])
    (intercept, slope), *_ = np.linalg.lstsq(design, np.log(err), rcond=None)
    return RateFit(float(slope), float(math.exp(intercept)))


@dataclass(frozen=True)
class ErrorReport:
    n: int
    rep: int
    theta_err: float
    b_err: tuple[float, float, float]
    sigma_err: tuple[float, float, float]
    noise_dist: tuple[float, float, float]
    k_stop: int

    def row(self) -> list:
        return [self.n, self.rep, self.theta_err, *self.b_err, *self.sigma_err, *self.noise_dist, self.k_stop]

    def check_invariants(self, slack: float = 1e-9) -> list[str]:
        """Names of violated invariants (empty when all hold)."""
        bad = []
        for name, (n1, n2, ninf) in (("b", self.b_err), ("sigma", self.sigma_err)):
            if not (n1 <= n2 + slack and n2 <= ninf + slack):
                bad.append(f"{name}: N1 <= N2 <= Ninf")
        tv, hel, ks = self.noise_dist
        if not ks <= tv:
            bad.append("Kolmogorov <= TV")
        if not hel <= math.sqrt(tv):
            bad.append("Hellinger <= sqrt(TV)")
        if not all(0.0 <= v <= 1.0 for v in self.noise_dist):
            bad.append("distances in [0, 1]")
        if not all(v >= 0 for v in (self.theta_err, *self.b_err, *self.sigma_err)):
            bad.append("non-negative errors")
        return bad


def error_report(result, spec, rep: int = 0, n: int | None = None) -> ErrorReport:
    """Score an estimation result against the generating model.

    ``result`` is an :class:`~plar.backfit.EstimationResult`; the sigma
    errors compare the variance estimate with sigma(e)^2.
    """
    domain = result.domain
    theta_err = float(np.linalg.norm(result.theta_hat - spec.theta))
    b_err = fn_norms(result.b_hat, spec.b_fn, domain)
    s_err = fn_norms(result.sigma2_hat, lambda e: spec.sigma_fn(e) ** 2, domain)
    return ErrorReport(
        n=int(n if n is not None else result.residuals.size + result.p),
        rep=int(rep),
        theta_err=theta_err,
        b_err=b_err,
        sigma_err=s_err,
        noise_dist=noise_distances(result.residuals),
        k_stop=result.k_stop,
    )
