"""Posterior fitting: mode finding, ADVI, NUTS, diagnostics and prediction."""

from .diagnostics import diagnostics, ess_bulk, ess_mean, mcse_mean, rhat
from .draws import PosteriorDraws, load_posterior, save_posterior
from .fit import PRESETS, FitConfig, FitResult, fit_posterior
from .hmc import Metric, PhasePoint, leapfrog
from .nuts import NutsConfig, nuts_sample
from .optimize import AdviResult, MapResult, OptimizationError, advi_fit, map_estimate
from .predict import PredictionSummary, draws_to_params, predict_revenue

__all__ = [
    "AdviResult", "FitConfig", "FitResult", "MapResult", "Metric", "NutsConfig",
    "OptimizationError", "PRESETS", "PhasePoint", "PosteriorDraws", "PredictionSummary",
    "advi_fit", "diagnostics", "draws_to_params", "ess_bulk", "ess_mean", "fit_posterior",
    "leapfrog", "load_posterior", "map_estimate", "mcse_mean", "nuts_sample",
    "predict_revenue", "rhat", "save_posterior",
]
