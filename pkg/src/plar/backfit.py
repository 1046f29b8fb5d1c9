"""Backfitting estimator of (theta, b) and the kernel variance estimator.

One iteration alternates two partial-residual fits:

* b_hat^(k-1) = NW smooth of X_l - phi_l' theta^(k-1) against e_l
* theta^(k)   = Sigma_n^-1 sum_l phi_l (X_l - b_hat^(k-1)(e_l))

with phi_l = (X_{l-1}, ..., X_{l-p}) and Sigma_n = sum_l phi_l phi_l', both
summed over l = p+1..n. Because the NW smoother is linear in its responses,
b_hat^(k-1)(e_l) = W X - (W Phi) theta^(k-1) for a fixed weight matrix W, which
makes the theta recursion affine:

    theta^(k) = c + A_n theta^(k-1),   A_n = Sigma_n^-1 Phi' W Phi.

:func:`run_backfit` exploits this by smoothing ``[X, Phi]`` once and iterating
in O(n p); :func:`backfit_step` is the literal single step, kept for checking.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy import linalg

from .errors import InvalidInputError, NumericalDegeneracyError
from .kernel import (BandwidthRule, Domain, FunctionEstimate, KernelKind, bandwidth,
                     nw_fit, nw_smooth)
from .metrics import grid_norms
from .model import Trajectory

logger = logging.getLogger(__name__)

#: Largest admissible 2-norm condition number of Sigma_n.
MAX_CONDITION = 1e12
#: Lower clamp of the variance estimate.
VARIANCE_FLOOR = 1e-10


@dataclass(frozen=True)
class FixedK:
    """Run exactly ``k`` iterations (theta^(1) is the initial value)."""

    k: int

    def __post_init__(self):
        if self.k < 1:
            raise InvalidInputError("FixedK needs k >= 1")


@dataclass(frozen=True)
class Stabilized:
    """Stop at the first k with max(|dtheta|_2, N1(db)) <= tol."""


@dataclass(frozen=True)
class BackfitConfig:
    theta_init: tuple[float, ...] | None = None  # zeros when None
    max_iters: int = 50
    tol: float = 1e-3
    kernel: KernelKind = field(default_factory=KernelKind.gaussian)
    bw_b: BandwidthRule = field(default_factory=BandwidthRule.default_b)
    bw_sigma: BandwidthRule = field(default_factory=BandwidthRule.default_sigma)
    stop_mode: FixedK | Stabilized = field(default_factory=Stabilized)
    domain: Domain | None = None
    # Test hook: hold b_hat at zero, reducing the theta update to plain OLS.
    update_b: bool = True

    def __post_init__(self):
        if not self.tol > 0:
            raise InvalidInputError("tol must be positive")
        if self.max_iters < 1:
            raise InvalidInputError("max_iters must be >= 1")
        if self.theta_init is not None:
            object.__setattr__(self, "theta_init", tuple(float(v) for v in np.ravel(self.theta_init)))

    def initial_theta(self, p: int) -> np.ndarray:
        if self.theta_init is None:
            return np.zeros(p)
        if len(self.theta_init) != p:
            raise InvalidInputError(f"theta_init has {len(self.theta_init)} entries, expected {p}")
        return np.array(self.theta_init)

    def to_dict(self) -> dict:
        stop = {"mode": "fixed", "k": self.stop_mode.k} if isinstance(self.stop_mode, FixedK) \
            else {"mode": "stabilized"}
        return {
            "theta_init": None if self.theta_init is None else list(self.theta_init),
            "max_iters": self.max_iters,
            "tol": self.tol,
            "kernel": self.kernel.to_dict(),
            "bw_b": self.bw_b.to_dict(),
            "bw_sigma": self.bw_sigma.to_dict(),
            "stop_mode": stop,
            "update_b": self.update_b,
        }


@dataclass(frozen=True, eq=False)
class EstimationResult:
    """Output of :func:`run_backfit`.

    ``theta_history[k-1]`` is theta^(k); ``b_hat`` is the NW fit to the partial
    residuals of the final theta, ``sigma2_hat`` the clamped variance estimate.
    ``increments`` holds (|dtheta|_2, N1(db)) for k = 2..k_stop.
    """

    p: int
    theta_history: np.ndarray
    b_hat: FunctionEstimate
    sigma2_hat: FunctionEstimate
    sigma_n_over_n: np.ndarray
    residuals: np.ndarray
    A_n: np.ndarray
    increments: np.ndarray
    h_b: float
    h_sigma: float
    domain: Domain
    stabilized: bool | None = None
    config: BackfitConfig | None = None

    @property
    def k_stop(self) -> int:
        return int(self.theta_history.shape[0])

    @property
    def theta_hat(self) -> np.ndarray:
        return self.theta_history[-1]

    @property
    def not_stabilized(self) -> bool:
        return self.stabilized is False

    @property
    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.A_n))))

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "k_stop": self.k_stop,
            "theta_hat": self.theta_hat.tolist(),
            "theta_history": self.theta_history.tolist(),
            "stabilized": self.stabilized,
            "increments": self.increments.tolist(),
            "h_b": self.h_b,
            "h_sigma": self.h_sigma,
            "spectral_radius_A_n": self.spectral_radius,
            "A_n": self.A_n.tolist(),
            "sigma_n_over_n": self.sigma_n_over_n.tolist(),
            "residual_variance": float(np.var(self.residuals, ddof=1)),
            "domain": self.domain.to_list(),
            "config": None if self.config is None else self.config.to_dict(),
        }

    def export(self, outdir) -> list[Path]:
        """Write ``result.json``, ``b_hat.csv`` and ``sigma2_hat.csv`` to ``outdir``."""
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        js = outdir / "result.json"
        js.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        return [js, self.b_hat.to_csv(outdir / "b_hat.csv"), self.sigma2_hat.to_csv(outdir / "sigma2_hat.csv")]


class StepResult(NamedTuple):
    b_est: FunctionEstimate
    theta_next: np.ndarray


def build_phi(traj: Trajectory | np.ndarray, p: int) -> np.ndarray:
    """Lag matrix with rows (X_{l-1}, ..., X_{l-p}) for l = p+1..n."""
    x = traj.x if isinstance(traj, Trajectory) else np.asarray(traj, dtype=float)
    n = x.size
    if p < 1:
        raise InvalidInputError("p must be >= 1")
    if n <= p:
        raise InvalidInputError(f"need n > p, got n = {n}, p = {p}")
    return np.column_stack([x[p - j - 1:n - j - 1] for j in range(p)])


def sigma_n(phi: np.ndarray) -> np.ndarray:
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    if phi.size == 0:
        raise InvalidInputError("phi is empty")
    S = phi.T @ phi
    return 0.5 * (S + S.T)


def _factor(S: np.ndarray):
    cond = float(np.linalg.cond(S))
    if not np.isfinite(cond) or cond >= MAX_CONDITION:
        raise NumericalDegeneracyError(
            f"Sigma_n is numerically singular (condition number {cond:.3e})", cond)
    try:
        return linalg.cho_factor(S)
    except linalg.LinAlgError as exc:
        raise NumericalDegeneracyError(f"Sigma_n is not positive definite ({exc})", cond) from exc


def _responses(traj: Trajectory, p: int) -> tuple[np.ndarray, np.ndarray]:
    return traj.x[p:], traj.e[p:]


def _domain_for(traj: Trajectory, cfg: BackfitConfig | None = None) -> Domain:
    if cfg is not None and cfg.domain is not None:
        return cfg.domain
    if traj.truth is not None and traj.truth.eta_law.bounded:
        return traj.truth.domain
    return Domain.from_data(traj.e)


def backfit_step(traj: Trajectory, phi: np.ndarray, theta_prev, cfg: BackfitConfig,
                 h: float | None = None) -> StepResult:
    """One backfitting transition theta^(k-1) -> (b_hat^(k-1), theta^(k))."""
    p = phi.shape[1]
    y, e = _responses(traj, p)
    theta_prev = np.asarray(theta_prev, dtype=float)
    if h is None:
        h = bandwidth(cfg.bw_b, traj.n, traj.e)
    r = y - phi @ theta_prev
    if not cfg.update_b:
        r = np.zeros_like(r)
    b_est = nw_fit(e, r, cfg.kernel, h, _domain_for(traj, cfg))
    factor = _factor(sigma_n(phi))
    theta_next = linalg.cho_solve(factor, phi.T @ (y - b_est(e)))
    return StepResult(b_est, theta_next)


def compute_An(traj: Trajectory, phi: np.ndarray, kernel: KernelKind, h: float) -> np.ndarray:
    """Contraction matrix Sigma_n^-1 sum_l phi_l [NW smooth of phi'](e_l)."""
    _, e = _responses(traj, phi.shape[1])
    factor = _factor(sigma_n(phi))
    smoothed = nw_smooth(e, e, phi, kernel, h)
    return linalg.cho_solve(factor, phi.T @ smoothed)


def estimate_variance(traj: Trajectory, phi: np.ndarray, theta_hat, b_hat, kernel: KernelKind,
                      h_sigma: float, domain: Domain | None = None) -> FunctionEstimate:
    """NW fit of squared final residuals, clamped below at :data:`VARIANCE_FLOOR`.

    ``b_hat`` may be any callable of e.
    """
    y, e = _responses(traj, phi.shape[1])
    res = y - phi @ np.asarray(theta_hat, dtype=float) - np.asarray(b_hat(e), dtype=float)
    fe = nw_fit(e, res * res, kernel, h_sigma, domain or _domain_for(traj))
    return FunctionEstimate(fe.sample_e, fe.sample_r, fe.bandwidth, kernel, fe.domain, VARIANCE_FLOOR)


def run_backfit(traj: Trajectory, p: int, cfg: BackfitConfig | None = None) -> EstimationResult:
    """Iterate the backfitting scheme, then estimate the variance function."""
    cfg = cfg or BackfitConfig()
    if traj.n <= p + 10:
        raise InvalidInputError(f"need n > p + 10 observations, got n = {traj.n}")
    phi = build_phi(traj, p)
    y, e = _responses(traj, p)
    domain = _domain_for(traj, cfg)
    grid = domain.grid()
    h_b = bandwidth(cfg.bw_b, traj.n, traj.e)
    h_s = bandwidth(cfg.bw_sigma, traj.n, traj.e)

    S = sigma_n(phi)
    factor = _factor(S)
    cols = np.column_stack([y, phi])
    if cfg.update_b:
        WS = nw_smooth(e, e, cols, cfg.kernel, h_b)
        GS = nw_smooth(grid, e, cols, cfg.kernel, h_b)
    else:
        WS = np.zeros_like(cols)
        GS = np.zeros((grid.size, cols.shape[1]))
    WX, WP = WS[:, 0], WS[:, 1:]
    GX, GP = GS[:, 0], GS[:, 1:]
    A_n = linalg.cho_solve(factor, phi.T @ WP)

    theta = cfg.initial_theta(p)
    history = [theta]
    increments = []
    b_grid = GX - GP @ theta
    stabilized = None
    if isinstance(cfg.stop_mode, FixedK):
        n_iter = cfg.stop_mode.k
    else:
        n_iter = cfg.max_iters
        stabilized = False
    for _ in range(n_iter - 1):
        b_design = WX - WP @ theta
        theta_new = linalg.cho_solve(factor, phi.T @ (y - b_design))
        b_grid_new = GX - GP @ theta_new
        d_theta = float(np.linalg.norm(theta_new - theta))
        d_b = grid_norms(b_grid_new - b_grid, domain)[0]
        increments.append((d_theta, d_b))
        history.append(theta_new)
        theta, b_grid = theta_new, b_grid_new
        if stabilized is not None and max(d_theta, d_b) <= cfg.tol:
            stabilized = True
            break
    if stabilized is False:
        logger.warning("backfitting did not stabilise within %d iterations", cfg.max_iters)

    theta_hat = history[-1]
    partial = y - phi @ theta_hat if cfg.update_b else np.zeros_like(y)
    b_hat = nw_fit(e, partial, cfg.kernel, h_b, domain)
    b_design = WX - WP @ theta_hat
    raw = y - phi @ theta_hat - b_design
    sq = nw_fit(e, raw * raw, cfg.kernel, h_s, domain)
    sigma2_hat = FunctionEstimate(sq.sample_e, sq.sample_r, h_s, cfg.kernel, domain, VARIANCE_FLOOR)
    residuals = raw / np.sqrt(sigma2_hat(e))

    return EstimationResult(
        p=p,
        theta_history=np.array(history),
        b_hat=b_hat,
        sigma2_hat=sigma2_hat,
        sigma_n_over_n=S / traj.n,
        residuals=residuals,
        A_n=A_n,
        increments=np.array(increments).reshape(-1, 2),
        h_b=h_b,
        h_sigma=h_s,
        domain=domain,
        stabilized=stabilized,
        config=cfg,
    )
