"""Normal distribution truncated to ``[0, inf)``: log-density, moments, sampling."""

from __future__ import annotations

import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri

LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)

_TAIL_SWITCH = -5.0
# Phi(alpha) is still a normal double above this; the inverse CDF stays exact
_CDF_FLOOR = -35.0


def log_ndtr_fast(a):
    """``log Phi(a)``; plain ``log(ndtr)`` where it is exact, ``log_ndtr`` in the tail."""
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        return float(log_ndtr(a)) if a < _TAIL_SWITCH else float(np.log(ndtr(a)))
    with np.errstate(divide="ignore"):
        out = np.log(ndtr(a))
    tail = a < _TAIL_SWITCH
    if np.any(tail):
        out[tail] = log_ndtr(a[tail])
    return out


def mills_ratio(a, log_cdf=None):
    """``phi(a) / Phi(a)``, stable for very negative ``a``."""
    a = np.asarray(a, dtype=float)
    if log_cdf is None:
        log_cdf = log_ndtr_fast(a)
    return np.exp(-0.5 * a * a - LOG_SQRT_2PI - log_cdf)


def trunc_normal_logpdf(q, mu, sigma):
    """Log-density at ``q`` of N(mu, sigma^2) restricted to ``[0, inf)``.

    Returns ``-inf`` for ``q < 0``. Broadcasts over array inputs.
    """
    q = np.asarray(q, dtype=float)
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    z = (q - mu) / sigma
    out = -0.5 * z * z - LOG_SQRT_2PI - np.log(sigma) - log_ndtr_fast(mu / sigma)
    out = np.where(q < 0, -np.inf, out)
    return out[()] if out.ndim == 0 else out


def trunc_normal_mean(mu, sigma):
    """E[q] for q ~ N(mu, sigma^2) truncated to ``[0, inf)``."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    out = mu + sigma * mills_ratio(mu / sigma)
    return out[()] if np.ndim(out) == 0 else out


def trunc_normal_var(mu, sigma):
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    a = mu / sigma
    lam = mills_ratio(a)
    return sigma**2 * (1.0 - lam * (a + lam))


def _tail_standard(lower: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Standard normal draws conditioned on ``z >= lower`` with ``lower > 0``.

    Exponential proposal with the optimal rate (Robert, 1995).
    """
    lower = np.asarray(lower, dtype=float)
    rate = 0.5 * (lower + np.sqrt(lower * lower + 4.0))
    out = np.empty_like(lower)
    todo = np.arange(lower.size)
    while todo.size:
        lo = lower[todo]
        lam = rate[todo]
        z = lo + rng.exponential(size=todo.size) / lam
        accept = rng.random(todo.size) <= np.exp(-0.5 * (z - lam) ** 2)
        out[todo[accept]] = z[accept]
        todo = todo[~accept]
    return out


def sample_trunc_normal(mu, sigma, rng: np.random.Generator, size=None):
    """Exact draws from N(mu, sigma^2) truncated to ``[0, inf)``.

    Uses the inverse CDF on the retained mass, ``z = -Phi^-1(u Phi(mu/sigma))``,
    and exponential rejection once ``mu/sigma`` drops below -5.
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    shape = np.broadcast_shapes(mu.shape, sigma.shape) if size is None else size
    mu_b = np.broadcast_to(mu, shape).reshape(-1)
    sd_b = np.broadcast_to(sigma, shape).reshape(-1)
    alpha = mu_b / sd_b
    u = rng.random(mu_b.size)
    z = np.empty_like(alpha)
    body = alpha >= _TAIL_SWITCH
    z[body] = -ndtri(u[body] * ndtr(alpha[body]))
    if not body.all():
        z[~body] = _tail_standard(-alpha[~body], rng)
    q = np.maximum(mu_b + sd_b * z, 0.0)
    q = q.reshape(shape)
    return q[()] if q.ndim == 0 else q


def sample_trunc_normal_from_uniform(mu, sigma, u):
    """Deterministic inverse-CDF map from uniforms in [0, 1), increasing in ``u``.

    Exact for ``mu/sigma >= -35``; beyond that ``Phi`` underflows and the
    exponential limit of the tail is used (relative error below 1e-3).

    Used by the simulator so that policies compared on the same seed share
    their noise (common random numbers).
    """
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    u = np.asarray(u, dtype=float)
    alpha = mu / sigma
    body = alpha >= _CDF_FLOOR
    z = np.empty(np.broadcast_shapes(alpha.shape, u.shape))
    alpha_b = np.broadcast_to(alpha, z.shape)
    u_b = np.broadcast_to(u, z.shape)
    body_b = np.broadcast_to(body, z.shape)
    z[body_b] = -ndtri((1.0 - u_b[body_b]) * ndtr(alpha_b[body_b]))
    if not body_b.all():
        lo = -alpha_b[~body_b]
        z[~body_b] = lo - np.log1p(-u_b[~body_b]) / lo
    mu_b = np.broadcast_to(mu, z.shape)
    sd_b = np.broadcast_to(sigma, z.shape)
    return np.maximum(mu_b + sd_b * z, 0.0)
