"""Mode finding and mean-field variational initialisation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hmc import as_target


class OptimizationError(RuntimeError):
    """Raised when the objective turns non-finite; ``last`` is the last good iterate."""

    def __init__(self, message, last=None):
        super().__init__(message)
        self.last = last


@dataclass
class MapResult:
    theta: np.ndarray
    logp: float
    grad_norm: float
    iterations: int
    converged: bool


def map_estimate(logpost, grad=None, init=None, max_steps: int = 10_000, tol: float = 1e-6,
                 step: float = 1.0, shrink: float = 0.5, armijo: float = 1e-4) -> MapResult:
    """Gradient ascent with Armijo backtracking.

    Stops once ``max|grad| < tol`` or after ``max_steps`` iterations. A
    successful step doubles the trial step length for the next iteration.
    """
    target = as_target(logpost, grad)
    theta = np.array(init, dtype=float)
    f, g = target.logp_and_grad(theta)
    if not np.isfinite(f) or not np.all(np.isfinite(g)):
        raise OptimizationError("objective is not finite at the starting point", theta)
    it = 0
    for it in range(1, max_steps + 1):
        gnorm = float(np.max(np.abs(g)))
        if gnorm < tol:
            return MapResult(theta, float(f), gnorm, it - 1, True)
        gg = float(g @ g)
        t = step
        while True:
            cand = theta + t * g
            f_new, g_new = target.logp_and_grad(cand)
            if np.isfinite(f_new) and f_new >= f + armijo * t * gg:
                break
            t *= shrink
            if t < 1e-300:
                raise OptimizationError(
                    f"line search failed at iteration {it} (objective {f:.6g})", theta)
        theta, f, g = cand, f_new, g_new
        step = 2.0 * t
    gnorm = float(np.max(np.abs(g)))
    return MapResult(theta, float(f), gnorm, it, gnorm < tol)


@dataclass
class AdviResult:
    mean: np.ndarray
    log_std: np.ndarray
    elbo: np.ndarray = field(repr=False)

    @property
    def std(self) -> np.ndarray:
        return np.exp(self.log_std)


def advi_fit(logpost, grad=None, init=None, iterations: int = 200_000, step_size: float = 1e-2,
             seed: int = 0, init_log_std: float = -1.0, max_bad: int = 100) -> AdviResult:
    """Mean-field Gaussian ADVI with one reparameterised sample per step.

    Step sizes follow the adaptive sequence
    ``eta * k^(-1/2 + 1e-16) / (1 + sqrt(s_k))`` where ``s_k`` is an
    exponential average (weight 0.1) of squared gradients.
    """
    target = as_target(logpost, grad)
    rng = np.random.default_rng(seed)
    mean = np.array(init, dtype=float)
    dim = mean.size
    omega = np.full(dim, float(init_log_std))
    s = None
    elbo = np.empty(iterations)
    bad = 0
    for k in range(1, iterations + 1):
        eps = rng.standard_normal(dim)
        sd = np.exp(omega)
        theta = mean + sd * eps
        lp, g = target.logp_and_grad(theta)
        if not np.isfinite(lp) or not np.all(np.isfinite(g)):
            bad += 1
            elbo[k - 1] = -np.inf
            if bad >= max_bad:
                raise OptimizationError(
                    f"ELBO not finite for {max_bad} consecutive steps at iteration {k}", mean)
            continue
        bad = 0
        # entropy of N(mean, sd^2) up to a constant is sum(omega)
        elbo[k - 1] = lp + omega.sum() + 0.5 * dim * (1.0 + np.log(2 * np.pi))
        g_mean = g
        g_omega = g * eps * sd + 1.0
        g2 = np.concatenate([g_mean, g_omega]) ** 2
        s = g2 if s is None else 0.1 * g2 + 0.9 * s
        rho = step_size * k ** (-0.5 + 1e-16) / (1.0 + np.sqrt(s))
        mean = mean + rho[:dim] * g_mean
        omega = omega + rho[dim:] * g_omega
    return AdviResult(mean, omega, elbo)
