"""Posterior-predictive revenue for observed design rows."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..features import DesignMatrix
from ..model import ModelParams, ParamLayout, location
from ..truncnorm import sample_trunc_normal
from .draws import PosteriorDraws


@dataclass
class PredictionSummary:
    mean: np.ndarray           # per row revenue
    lower: np.ndarray          # 2.5% quantile
    upper: np.ndarray          # 97.5% quantile
    days: np.ndarray           # distinct absolute days, ascending
    daily_mean: np.ndarray
    daily_lower: np.ndarray
    daily_upper: np.ndarray
    n_draws: int

    def __len__(self):
        return self.mean.shape[0]


def draws_to_params(draws: PosteriorDraws | np.ndarray, layout: ParamLayout,
                    count: int | None = None) -> list[ModelParams]:
    """Constrained parameter sets for (an even thinning of) the draws."""
    flat = draws if isinstance(draws, np.ndarray) else (
        draws.thinned(count) if count else draws.flat)
    return [layout.unpack(theta)[0] for theta in np.atleast_2d(flat)]


def predict_revenue(draws, design: DesignMatrix, layout: ParamLayout, thin: int = 500,
                    seed: int = 0, level: float = 0.95) -> PredictionSummary:
    """Sample revenue for every row under ``thin`` posterior draws and summarise.

    ``draws`` is a :class:`PosteriorDraws` or a list of :class:`ModelParams`.
    The store-day summary sums the sampled row revenues within each day
    before taking quantiles, so daily intervals account for shared draws.
    """
    n, k = design.n_regions, design.n_products
    if (layout.n_regions, layout.n_products) != (n, k):
        raise ValueError("posterior and design disagree on dimensions")
    if len(design) and (design.region.max() >= n or design.product.max() >= k
                        or design.region.min() < 0 or design.product.min() < 0):
        raise IndexError("design contains unknown region or product indices")
    params = draws if isinstance(draws, list) else draws_to_params(draws, layout, thin)
    rng = np.random.default_rng(seed)
    d = design.design()
    days, day_idx = np.unique(design.day, return_inverse=True)
    rev = np.empty((len(params), len(design)))
    for s, p in enumerate(params):
        mu = location(p, d)
        rev[s] = sample_trunc_normal(mu, p.sigma_q, rng) * design.price
    alpha = (1.0 - level) / 2.0
    daily = np.zeros((len(params), days.size))
    for s in range(len(params)):
        daily[s] = np.bincount(day_idx, weights=rev[s], minlength=days.size)
    return PredictionSummary(
        mean=rev.mean(axis=0),
        lower=np.quantile(rev, alpha, axis=0),
        upper=np.quantile(rev, 1 - alpha, axis=0),
        days=days,
        daily_mean=daily.mean(axis=0),
        daily_lower=np.quantile(daily, alpha, axis=0),
        daily_upper=np.quantile(daily, 1 - alpha, axis=0),
        n_draws=len(params),
    )
