"""Euclidean Hamiltonian dynamics shared by the samplers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class Target:
    """Adapts ``logpost``/``grad`` callables to ``logp_and_grad``.

    Objects that already provide ``logp_and_grad`` are used directly.
    """

    def __init__(self, logpost, grad=None):
        self._logpost = logpost
        self._grad = grad

    def logp_and_grad(self, theta):
        if self._grad is None:
            return self._logpost(theta)
        lp = float(self._logpost(theta))
        if not np.isfinite(lp):
            return -np.inf, np.zeros_like(theta)
        return lp, np.asarray(self._grad(theta), dtype=float)


def as_target(logpost, grad=None):
    if grad is None and hasattr(logpost, "logp_and_grad"):
        return logpost
    return Target(logpost, grad)


class Metric:
    """Gaussian kinetic energy ``K(p) = p' M^-1 p / 2``.

    ``inv_metric`` is either a vector (diagonal metric) or a full matrix.
    """

    def __init__(self, inv_metric):
        inv_metric = np.asarray(inv_metric, dtype=float)
        self.inv_metric = inv_metric
        self.dense = inv_metric.ndim == 2
        if self.dense:
            # p ~ N(0, M) with M = inv(inv_metric): p = L^-T z where inv_metric = L L'
            self._chol = np.linalg.cholesky(inv_metric)
        else:
            self._scale = 1.0 / np.sqrt(inv_metric)

    @property
    def dim(self) -> int:
        return self.inv_metric.shape[0]

    def velocity(self, p):
        return self.inv_metric @ p if self.dense else self.inv_metric * p

    def kinetic(self, p) -> float:
        # overflow to inf is handled by callers as a rejected trajectory
        with np.errstate(over="ignore", invalid="ignore"):
            return 0.5 * float(p @ self.velocity(p))

    def sample_momentum(self, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal(self.dim)
        if self.dense:
            return np.linalg.solve(self._chol.T, z)
        return z * self._scale


@dataclass
class PhasePoint:
    theta: np.ndarray
    p: np.ndarray
    logp: float
    grad: np.ndarray

    def energy(self, metric: Metric) -> float:
        return -self.logp + metric.kinetic(self.p)


def leapfrog(target, metric: Metric, z: PhasePoint, eps: float) -> PhasePoint:
    p = z.p + 0.5 * eps * z.grad
    theta = z.theta + eps * metric.velocity(p)
    logp, grad = target.logp_and_grad(theta)
    if not np.isfinite(logp):
        return PhasePoint(theta, p, -np.inf, np.zeros_like(theta))
    p = p + 0.5 * eps * grad
    return PhasePoint(theta, p, float(logp), grad)


def find_reasonable_step_size(target, metric: Metric, z: PhasePoint, eps: float,
                              rng: np.random.Generator) -> float:
    """Double or halve ``eps`` until one leapfrog step crosses acceptance 0.8."""
    z = PhasePoint(z.theta, metric.sample_momentum(rng), z.logp, z.grad)
    h0 = z.energy(metric)
    z1 = leapfrog(target, metric, z, eps)
    delta = h0 - z1.energy(metric)
    if not np.isfinite(delta):
        delta = -np.inf
    direction = 1 if delta > np.log(0.8) else -1
    for _ in range(100):
        z = PhasePoint(z.theta, metric.sample_momentum(rng), z.logp, z.grad)
        h0 = z.energy(metric)
        z1 = leapfrog(target, metric, z, eps)
        delta = h0 - z1.energy(metric)
        if not np.isfinite(delta):
            delta = -np.inf
        if direction == 1 and not delta > np.log(0.8):
            break
        if direction == -1 and not delta < np.log(0.8):
            break
        eps = eps * 2.0 if direction == 1 else eps * 0.5
        if eps > 1e7 or eps < 1e-12:
            break
    return eps
