"""End-to-end posterior fit: initialisation followed by NUTS."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..model import Design, Hyperparams, ParamLayout, Posterior
from .draws import PosteriorDraws
from .nuts import NutsConfig, nuts_sample
from .optimize import OptimizationError, advi_fit, map_estimate

PRESETS = {
    "full": {"tune": 5000, "draws": 5000, "chains": 4},
    "desk": {"tune": 1000, "draws": 1000, "chains": 2},
}


@dataclass
class FitConfig:
    tune: int = 1000
    draws: int = 1000
    chains: int = 2
    target_accept: float = 0.8
    max_depth: int = 10
    metric: str = "dense"
    init: str = "map"            # "map" or "advi"
    map_steps: int = 2000
    advi_iterations: int = 200_000
    jitter: float = 0.1
    collapse_means: bool = True
    hessian_metric: bool = True  # seed a dense metric from the curvature at the start
    threads: int = 1
    seed: int = 0

    @classmethod
    def preset(cls, name: str, **overrides) -> "FitConfig":
        if name not in PRESETS:
            raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        return cls(**{**PRESETS[name], **overrides})

    def __post_init__(self):
        if self.init not in ("map", "advi"):
            raise ValueError(f"unknown initialiser {self.init!r}")
        if self.metric not in ("diag", "dense"):
            raise ValueError(f"unknown metric {self.metric!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FitResult:
    draws: PosteriorDraws        # full layout, block means included
    posterior: Posterior
    init: np.ndarray

    @property
    def layout(self) -> ParamLayout:
        return self.posterior.layout.full()

    @property
    def failed(self) -> bool:
        return self.draws.failed


def initial_point(posterior: Posterior, config: FitConfig) -> np.ndarray:
    start = posterior.layout.initial_point(posterior.hyper)
    if config.init == "advi":
        return advi_fit(posterior, init=start, iterations=config.advi_iterations,
                        seed=config.seed).mean
    try:
        return map_estimate(posterior, init=start, max_steps=config.map_steps).theta
    except OptimizationError as err:
        if err.last is None:
            raise
        return err.last


def curvature_inv_metric(target, theta: np.ndarray, h: float = 1e-4,
                         floor: float = 1.0) -> np.ndarray:
    """Inverse of the negative Hessian at ``theta`` by central differences of
    the gradient, with eigenvalues floored so the result is positive definite."""
    d = theta.size
    H = np.empty((d, d))
    for i in range(d):
        e = np.zeros(d)
        e[i] = h
        H[i] = (target.logp_and_grad(theta + e)[1] - target.logp_and_grad(theta - e)[1]) / (2 * h)
    H = -0.5 * (H + H.T)
    vals, vecs = np.linalg.eigh(H)
    vals = np.maximum(vals, floor)
    return (vecs / vals) @ vecs.T


def complete_draws(posterior: Posterior, draws: PosteriorDraws, seed: int) -> PosteriorDraws:
    """Add the integrated-out block means to every draw (no-op if none were)."""
    if not posterior.collapsed:
        return draws
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0x6D75,)))
    full = posterior.layout.full()
    c, s, _ = draws.samples.shape
    out = np.empty((c, s, full.dim))
    for i in range(c):
        for j in range(s):
            out[i, j] = posterior.complete(draws.samples[i, j], rng)
    return PosteriorDraws(out, full.names(), draws.sampler_stats, draws.step_size,
                          draws.inv_metric, draws.failed,
                          {**draws.info, "collapsed_means": True})


def fit_posterior(design: Design, hyper: Hyperparams, config: FitConfig | None = None,
                  callback=None) -> FitResult:
    config = config or FitConfig()
    posterior = Posterior(design, hyper, collapsed=config.collapse_means)
    init = initial_point(posterior, config)
    inv = None
    if config.metric == "dense" and config.hessian_metric:
        inv = curvature_inv_metric(posterior, init)
    nuts = NutsConfig(tune=config.tune, draws=config.draws, chains=config.chains,
                      target_accept=config.target_accept, max_depth=config.max_depth,
                      metric=config.metric, jitter=config.jitter, threads=config.threads,
                      seed=config.seed, init_inv_metric=inv, callback=callback)
    raw = nuts_sample(posterior, init=init, config=nuts, names=posterior.layout.names())
    return FitResult(complete_draws(posterior, raw, config.seed), posterior, init)
