"""Multinomial No-U-Turn sampler with windowed warmup adaptation."""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .adaptation import DualAveraging, WelfordEstimator, adaptation_windows
from .draws import PosteriorDraws
from .hmc import Metric, PhasePoint, as_target, find_reasonable_step_size, leapfrog

MAX_DIVERGENT_FRACTION = 0.25


@dataclass
class NutsConfig:
    tune: int = 1000
    draws: int = 1000
    chains: int = 4
    target_accept: float = 0.8
    max_depth: int = 10
    max_energy_error: float = 1000.0
    metric: str = "diag"          # "diag" or "dense"
    jitter: float = 0.1
    init_step_size: float = 1.0
    threads: int = 1
    seed: int = 0
    init_inv_metric: np.ndarray | None = None   # starting metric; identity when None
    callback: object = None                     # called as callback(phase, iteration, info)

    def __post_init__(self):
        if self.tune < 0 or self.draws < 1 or self.chains < 1:
            raise ValueError("tune >= 0, draws >= 1 and chains >= 1 are required")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.metric not in ("diag", "dense"):
            raise ValueError(f"unknown metric {self.metric!r}")


@dataclass
class _Subtree:
    valid: bool
    z_end: PhasePoint = None
    z_prop: PhasePoint = None
    ps_beg: np.ndarray = None     # velocity at the end nearest the existing trajectory
    ps_end: np.ndarray = None
    p_beg: np.ndarray = None
    p_end: np.ndarray = None
    rho: np.ndarray = None
    log_weight: float = -np.inf


def _no_u_turn(ps_minus, ps_plus, rho) -> bool:
    return float(ps_plus @ rho) > 0 and float(ps_minus @ rho) > 0


class NutsKernel:
    """One chain's transition; holds the step size and metric in use."""

    def __init__(self, target, metric: Metric, step_size: float, rng: np.random.Generator,
                 max_depth: int = 10, max_energy_error: float = 1000.0):
        self.target = target
        self.metric = metric
        self.step_size = step_size
        self.rng = rng
        self.max_depth = max_depth
        self.max_energy_error = max_energy_error

    def _build(self, z: PhasePoint, depth: int, eps: float, h0: float, stats: dict) -> _Subtree:
        if depth == 0:
            z1 = leapfrog(self.target, self.metric, z, eps)
            stats["n_leapfrog"] += 1
            h = z1.energy(self.metric)
            if np.isnan(h):
                h = np.inf
            delta = h0 - h
            stats["sum_accept"] += 1.0 if delta > 0 else np.exp(delta)
            if -delta > self.max_energy_error:
                stats["divergent"] = True
                return _Subtree(False)
            ps = self.metric.velocity(z1.p)
            return _Subtree(True, z1, z1, ps, ps, z1.p, z1.p, z1.p.copy(), delta)

        first = self._build(z, depth - 1, eps, h0, stats)
        if not first.valid:
            return first
        second = self._build(first.z_end, depth - 1, eps, h0, stats)
        if not second.valid:
            return second
        log_w = np.logaddexp(first.log_weight, second.log_weight)
        prop = first.z_prop
        if self.rng.random() < np.exp(second.log_weight - log_w):
            prop = second.z_prop
        rho = first.rho + second.rho
        ok = (_no_u_turn(first.ps_beg, second.ps_end, rho)
              and _no_u_turn(first.ps_beg, second.ps_beg, first.rho + second.p_beg)
              and _no_u_turn(first.ps_end, second.ps_end, second.rho + first.p_end))
        return _Subtree(ok, second.z_end, prop, first.ps_beg, second.ps_end,
                        first.p_beg, second.p_end, rho, log_w)

    def transition(self, theta: np.ndarray, logp: float, grad: np.ndarray):
        metric, rng = self.metric, self.rng
        z0 = PhasePoint(theta, metric.sample_momentum(rng), logp, grad)
        h0 = z0.energy(metric)
        ps0 = metric.velocity(z0.p)
        # trajectory ends: minus (backward) and plus (forward)
        z_minus = z_plus = z0
        ps_minus = ps_plus = ps0
        p_minus = p_plus = z0.p
        rho = z0.p.copy()
        sample = z0
        log_w = 0.0
        stats = {"n_leapfrog": 0, "sum_accept": 0.0, "divergent": False}
        depth = 0
        while depth < self.max_depth:
            forward = rng.random() > 0.5
            if forward:
                sub = self._build(z_plus, depth, self.step_size, h0, stats)
            else:
                sub = self._build(z_minus, depth, -self.step_size, h0, stats)
            if not sub.valid:
                break
            depth += 1
            if sub.log_weight > log_w or rng.random() < np.exp(sub.log_weight - log_w):
                sample = sub.z_prop
            log_w = np.logaddexp(log_w, sub.log_weight)
            if forward:
                left_rho, right_rho = rho, sub.rho
                l_ps_minus, l_ps_plus, l_p_plus = ps_minus, ps_plus, p_plus
                r_ps_minus, r_ps_plus, r_p_minus = sub.ps_beg, sub.ps_end, sub.p_beg
                z_plus, ps_plus, p_plus = sub.z_end, sub.ps_end, sub.p_end
            else:
                left_rho, right_rho = sub.rho, rho
                l_ps_minus, l_ps_plus, l_p_plus = sub.ps_end, sub.ps_beg, sub.p_beg
                r_ps_minus, r_ps_plus, r_p_minus = ps_minus, ps_plus, p_minus
                z_minus, ps_minus, p_minus = sub.z_end, sub.ps_end, sub.p_end
            rho = left_rho + right_rho
            if not (_no_u_turn(l_ps_minus, r_ps_plus, rho)
                    and _no_u_turn(l_ps_minus, r_ps_minus, left_rho + r_p_minus)
                    and _no_u_turn(l_ps_plus, r_ps_plus, right_rho + l_p_plus)):
                break
        n = max(stats["n_leapfrog"], 1)
        info = {
            "accept_stat": stats["sum_accept"] / n,
            "n_leapfrog": stats["n_leapfrog"],
            "tree_depth": depth,
            "divergent": stats["divergent"],
            "energy": sample.energy(metric),
            "step_size": self.step_size,
        }
        return sample.theta, sample.logp, sample.grad, info


_STAT_KEYS = ("accept_stat", "n_leapfrog", "tree_depth", "divergent", "energy", "step_size")


def _initial_point(target, init, jitter, rng):
    init = np.asarray(init, dtype=float)
    for _ in range(100):
        theta = init + jitter * rng.standard_normal(init.shape) if jitter > 0 else init.copy()
        logp, grad = target.logp_and_grad(theta)
        if np.isfinite(logp) and np.all(np.isfinite(grad)):
            return theta, float(logp), grad
    raise RuntimeError("could not find an initial point with finite log density")


def run_chain(target, init, config: NutsConfig, seed_seq) -> dict:
    """Warmup plus sampling for one chain; returns arrays of draws and stats."""
    rng = np.random.default_rng(seed_seq)
    dim = np.asarray(init).size
    theta, logp, grad = _initial_point(target, init, config.jitter, rng)
    dense = config.metric == "dense"
    if config.init_inv_metric is not None:
        m0 = np.asarray(config.init_inv_metric, dtype=float)
        m0 = (m0 if dense else np.diag(m0).copy()) if m0.ndim == 2 else (
            np.diag(m0) if dense else m0)
    else:
        m0 = np.eye(dim) if dense else np.ones(dim)
    metric = Metric(m0)
    step = find_reasonable_step_size(target, metric, PhasePoint(theta, None, logp, grad),
                                     config.init_step_size, rng)
    kernel = NutsKernel(target, metric, step, rng, config.max_depth, config.max_energy_error)
    da = DualAveraging(step, config.target_accept)
    windows = adaptation_windows(config.tune)
    window_ends = {end: start for start, end in windows}
    welford = WelfordEstimator(dim, dense)

    warm_stats = {k: np.zeros(config.tune) for k in _STAT_KEYS}
    for it in range(config.tune):
        theta, logp, grad, info = kernel.transition(theta, logp, grad)
        for key in _STAT_KEYS:
            warm_stats[key][it] = info[key]
        kernel.step_size = da.update(info["accept_stat"])
        if config.callback is not None:
            config.callback("warmup", it, info)
        if any(start <= it < end for start, end in windows):
            welford.add(theta)
        if it + 1 in window_ends and welford.n > 1:
            previous = kernel.metric.inv_metric if dense else None
            kernel.metric = Metric(welford.regularized(previous))
            welford.reset()
            step = find_reasonable_step_size(target, kernel.metric,
                                             PhasePoint(theta, None, logp, grad),
                                             kernel.step_size, rng)
            kernel.step_size = step
            da.restart(step)
    if config.tune > 0:
        kernel.step_size = da.final_step_size

    samples = np.empty((config.draws, dim))
    logps = np.empty(config.draws)
    stats = {k: np.zeros(config.draws) for k in _STAT_KEYS}
    for it in range(config.draws):
        theta, logp, grad, info = kernel.transition(theta, logp, grad)
        samples[it] = theta
        if config.callback is not None:
            config.callback("sampling", it, info)
        logps[it] = logp
        for key in _STAT_KEYS:
            stats[key][it] = info[key]
    return {
        "samples": samples,
        "logp": logps,
        "stats": stats,
        "warmup_stats": warm_stats,
        "step_size": kernel.step_size,
        "inv_metric": kernel.metric.inv_metric,
    }


def _run_chain_packed(args):
    return run_chain(*args)


def nuts_sample(logpost, grad=None, init=None, config: NutsConfig | None = None,
                names=None, **kwargs) -> PosteriorDraws:
    """Draw ``config.chains`` independent chains of NUTS samples.

    ``logpost`` is either a callable (then ``grad`` must be given) or an
    object with ``logp_and_grad``. Keyword arguments override fields of
    ``config``. Chains use independent streams spawned from ``seed`` and
    results do not depend on ``threads``.
    """
    if config is None:
        config = NutsConfig(**kwargs)
    elif kwargs:
        config = NutsConfig(**{**config.__dict__, **kwargs})
    if init is None:
        raise ValueError("an initial point is required")
    target = as_target(logpost, grad)
    seeds = np.random.SeedSequence(config.seed).spawn(config.chains)
    jobs = [(target, init, config, s) for s in seeds]
    t0 = time.perf_counter()
    if config.threads > 1 and config.chains > 1:
        with ProcessPoolExecutor(max_workers=min(config.threads, config.chains)) as pool:
            results = list(pool.map(_run_chain_packed, jobs))
    else:
        results = [run_chain(*job) for job in jobs]
    elapsed = time.perf_counter() - t0
    samples = np.stack([r["samples"] for r in results])
    stats = {k: np.stack([r["stats"][k] for r in results]) for k in _STAT_KEYS}
    stats["logp"] = np.stack([r["logp"] for r in results])
    divergent_frac = stats["divergent"].mean(axis=1)
    return PosteriorDraws(
        samples=samples,
        names=list(names) if names is not None else None,
        sampler_stats=stats,
        step_size=np.array([r["step_size"] for r in results]),
        inv_metric=np.stack([r["inv_metric"] for r in results]),
        failed=bool(np.any(divergent_frac > MAX_DIVERGENT_FRACTION)),
        info={"method": "nuts", "tune": config.tune, "draws": config.draws,
              "chains": config.chains, "metric": config.metric,
              "target_accept": config.target_accept, "seed": config.seed,
              "elapsed_sec": elapsed},
    )
