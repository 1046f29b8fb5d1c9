"""One-step prediction and prediction intervals from a fitted model."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .backfit import EstimationResult, build_phi
from .errors import InsufficientDataError, InvalidInputError
from .model import Trajectory

INTERVAL_COLUMNS = ("t", "point", "lo", "hi", "alpha")


@dataclass(frozen=True)
class ForecastInterval:
    point: float
    lo: float
    hi: float
    alpha: float
    sigma_at_e: float
    q_alpha: float

    def covers(self, x: float) -> bool:
        return self.lo <= x <= self.hi

    @property
    def width(self) -> float:
        return self.hi - self.lo


def make_interval(point: float, sigma_at_e: float, q_alpha: float, alpha: float) -> ForecastInterval:
    """Symmetric interval ``point +/- sigma_at_e * q_alpha``."""
    if not 0.0 < alpha < 1.0:
        raise InvalidInputError(f"alpha must lie in (0, 1), got {alpha}")
    half = sigma_at_e * q_alpha
    return ForecastInterval(point, point - half, point + half, alpha, sigma_at_e, q_alpha)


def _lags(last_p_x, p: int) -> np.ndarray:
    lags = np.asarray(last_p_x, dtype=float).ravel()
    if lags.size != p:
        raise InvalidInputError(f"need the last {p} observations, got {lags.size}")
    return lags


def predict_next(result: EstimationResult, last_p_x, e_next: float) -> float:
    """phi' theta_hat + b_hat(e_next).

    ``last_p_x`` lists the most recent observations newest first:
    (X_n, X_{n-1}, ..., X_{n-p+1}).
    """
    lags = _lags(last_p_x, result.p)
    return float(lags @ result.theta_hat + result.b_hat(float(e_next)))


def predict_path(result: EstimationResult, last_p_x, e_future: Sequence[float]) -> np.ndarray:
    """Multi-step point forecasts, plugging predictions back into the AR lags.

    ``e_future`` holds the known inputs e_{n+1}, e_{n+2}, ...
    """
    lags = list(_lags(last_p_x, result.p))
    out = []
    for e in e_future:
        x = float(np.dot(lags, result.theta_hat) + result.b_hat(float(e)))
        out.append(x)
        lags = [x] + lags[:-1]
    return np.array(out)


def retro_residuals(result: EstimationResult, traj: Trajectory) -> np.ndarray:
    """(X_hat_{j+1} - X_{j+1}) / sigma_hat(e_{j+1}) for j = p..n-1.

    Uses the final estimates for every in-sample prediction.
    """
    p = result.p
    phi = build_phi(traj, p)
    e = traj.e[p:]
    pred = phi @ result.theta_hat + result.b_hat(e)
    return (pred - traj.x[p:]) / np.sqrt(result.sigma2_hat(e))


def quantile_inverse(std_residuals, a: float) -> float:
    """Fraction of |residual| strictly greater than ``a``."""
    r = np.abs(np.asarray(std_residuals, dtype=float))
    if r.size == 0:
        raise InsufficientDataError("no residuals")
    return float(np.count_nonzero(r > a)) / r.size


def quantile(std_residuals, alpha: float) -> float:
    """Smallest a with quantile_inverse(a) <= alpha.

    This is the ceil((1 - alpha) m)-th order statistic of |residuals|.
    """
    if not 0.0 < alpha < 1.0:
        raise InvalidInputError(f"alpha must lie in (0, 1), got {alpha}")
    r = np.sort(np.abs(np.asarray(std_residuals, dtype=float)))
    need = math.ceil(2.0 / alpha)
    if r.size < need:
        raise InsufficientDataError(f"alpha = {alpha} needs at least {need} residuals, got {r.size}")
    # rounding absorbs representation error in (1 - alpha), e.g. 0.8 * 10
    rank = math.ceil(round((1.0 - alpha) * r.size, 9))
    return float(r[max(rank, 1) - 1])


def interval(result: EstimationResult, traj: Trajectory, last_p_x, e_next: float, alpha: float,
             std_residuals=None) -> ForecastInterval:
    """Prediction interval for the next observation at level ``alpha``.

    ``std_residuals`` may be passed to reuse :func:`retro_residuals` across
    many calls on the same fit.
    """
    if std_residuals is None:
        std_residuals = retro_residuals(result, traj)
    point = predict_next(result, last_p_x, e_next)
    sigma = math.sqrt(result.sigma2_hat(float(e_next)))
    return make_interval(point, sigma, quantile(std_residuals, alpha), alpha)


def holdout_intervals(result: EstimationResult, x_hist, x_new, e_new, alpha: float,
                      std_residuals) -> list[ForecastInterval]:
    """One-step intervals for each point of a holdout continuation.

    ``x_hist`` ends with the last in-sample observations; ``x_new`` and
    ``e_new`` are the holdout pairs. Each prediction conditions on observed
    (not predicted) past values.
    """
    p = result.p
    x_all = np.concatenate([np.asarray(x_hist, dtype=float)[-p:], np.asarray(x_new, dtype=float)])
    e_new = np.asarray(e_new, dtype=float)
    lags = np.column_stack([x_all[p - j - 1:x_all.size - j - 1] for j in range(p)])
    points = lags @ result.theta_hat + result.b_hat(e_new)
    sig = np.sqrt(result.sigma2_hat(e_new))
    q = quantile(std_residuals, alpha)
    return [make_interval(float(pt), float(s), q, alpha) for pt, s in zip(points, sig)]


def write_intervals_csv(path, rows: Iterable[tuple[int, ForecastInterval]]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(INTERVAL_COLUMNS)
        for t, iv in rows:
            w.writerow([t, repr(iv.point), repr(iv.lo), repr(iv.hi), repr(iv.alpha)])
    return path
