"""Partially linear autoregression with a periodic exogenous input.

Simulation, backfitting estimation, prediction intervals and Monte Carlo
experiments for X_t = sum_j a_j X_{t-j} + b(e_t) + sigma(e_t) eps_t.
"""

from .backfit import BackfitConfig, EstimationResult, FixedK, Stabilized, run_backfit
from .errors import (
    DegenerateInputError,
    InsufficientDataError,
    InvalidInputError,
    NumericalDegeneracyError,
    PlarError,
    StabilityError,
)
from .forecast import ForecastInterval, interval, predict_next, quantile, retro_residuals
from .harness import ExperimentPlan, RateTable, builtin_model, run_plan, stopping_study
from .kernel import BandwidthRule, Domain, FunctionEstimate, KernelKind, nw_fit
from .metrics import ErrorReport, RateFit, error_report, fit_rate, fn_norms, noise_distances
from .model import ModelSpec, NoiseLaw, SymbolicFn, Trajectory, check_stability, coeffs_from_roots, simulate

__version__ = "0.1.0"

__all__ = [
    "BackfitConfig", "BandwidthRule", "DegenerateInputError", "Domain", "ErrorReport",
    "EstimationResult", "ExperimentPlan", "FixedK", "ForecastInterval", "FunctionEstimate",
    "InsufficientDataError", "InvalidInputError", "KernelKind", "ModelSpec", "NoiseLaw",
    "NumericalDegeneracyError", "PlarError", "RateFit", "RateTable", "Stabilized",
    "StabilityError", "SymbolicFn", "Trajectory", "builtin_model", "check_stability",
    "coeffs_from_roots", "error_report", "fit_rate", "fn_norms", "interval", "noise_distances",
    "nw_fit", "predict_next", "quantile", "retro_residuals", "run_backfit", "run_plan",
    "simulate", "stopping_study",
]
