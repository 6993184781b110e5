"""Cholesky factors of correlation matrices: unconstrained transform, LKJ
density and onion-method sampling.

The unconstrained coordinates are the hyperbolic arctangents of the
canonical partial correlations, stored row by row over the strict lower
triangle (row 1 col 0, row 2 cols 0-1, ...).
"""

from __future__ import annotations

import numpy as np
from scipy.special import betaln


def n_free(dim: int) -> int:
    return dim * (dim - 1) // 2


def _log1m_tanh2(y):
    # log(1 - tanh(y)^2) = -2 log cosh(y), written to avoid overflow
    a = np.abs(y)
    return 2.0 * (np.log(2.0) - a - np.log1p(np.exp(-2.0 * a)))


def corr_cholesky(y: np.ndarray, dim: int) -> tuple[np.ndarray, float]:
    """Map unconstrained ``y`` to a lower-triangular ``L`` with unit-norm rows.

    Returns ``(L, log_abs_det_jacobian)``.
    """
    y = np.asarray(y, dtype=float)
    L = np.zeros((dim, dim))
    L[0, 0] = 1.0
    if dim == 1:
        return L, 0.0
    z = np.tanh(y)
    log_jac = float(_log1m_tanh2(y).sum())
    rows, cols = np.tril_indices(dim, -1)
    Z = np.zeros((dim, dim))
    Z[rows, cols] = z
    # column sweep: every row accumulates its squared norm left to right
    ssq = np.zeros(dim)
    for j in range(dim - 1):
        r = slice(j + 1, dim)
        t = np.sqrt(1.0 - ssq[r])
        L[r, j] = Z[r, j] * t
        log_jac += float(np.log(t).sum())
        ssq[r] += L[r, j] ** 2
    L[np.arange(1, dim), np.arange(1, dim)] = np.sqrt(1.0 - ssq[1:])
    return L, log_jac


def corr_cholesky_vjp(y: np.ndarray, L: np.ndarray, gL: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. ``y`` of ``<gL, L(y)> + log_jac(y)``.

    ``gL`` is the upstream gradient on the lower triangle of ``L``
    (diagonal included); the Jacobian term is always added, since callers
    always want the log-density in unconstrained space.
    """
    dim = L.shape[0]
    if dim == 1:
        return np.zeros(0)
    y = np.asarray(y, dtype=float)
    z = np.tanh(y)
    rows, cols = np.tril_indices(dim, -1)
    Z = np.zeros((dim, dim))
    Z[rows, cols] = z
    gZ = np.zeros((dim, dim))
    diag = np.arange(1, dim)
    # s_j per row = squared norm of the first j entries; recover from L
    csum = np.concatenate([np.zeros((dim, 1)), np.cumsum(L**2, axis=1)], axis=1)
    g_s = np.zeros(dim)
    g_s[diag] = -gL[diag, diag] / (2.0 * L[diag, diag])
    for j in range(dim - 2, -1, -1):
        r = np.arange(j + 1, dim)
        t = np.sqrt(1.0 - csum[r, j])
        g_l = gL[r, j] + 2.0 * L[r, j] * g_s[r]
        gZ[r, j] = g_l * t
        g_t = g_l * Z[r, j] + 1.0 / t
        g_s[r] = g_s[r] - g_t / (2.0 * t)
    gz = gZ[rows, cols]
    return gz * (1.0 - z * z) - 2.0 * z


def corr_cholesky_inverse(L: np.ndarray) -> np.ndarray:
    """Unconstrained coordinates of a valid correlation Cholesky factor."""
    dim = L.shape[0]
    rows, cols = np.tril_indices(dim, -1)
    csum = np.concatenate([np.zeros((dim, 1)), np.cumsum(L**2, axis=1)], axis=1)
    z = L[rows, cols] / np.sqrt(1.0 - csum[rows, cols])
    return np.arctanh(np.clip(z, -1.0, 1.0))


def lkj_log_normalizer(dim: int, eta: float) -> float:
    """log of the constant making ``det(C)^(eta-1)`` a density over correlations."""
    total = 0.0
    for k in range(1, dim):
        m = dim - k
        b = eta + 0.5 * (m - 1)
        total += (2.0 * eta - 2.0 + m) * m * np.log(2.0) + m * betaln(b, b)
    return float(total)


def lkj_cholesky_logpdf(L: np.ndarray, eta: float, normalized: bool = True) -> float:
    dim = L.shape[0]
    if dim == 1:
        return 0.0
    d = np.log(np.diag(L)[1:])
    coef = dim - np.arange(1, dim) + 2.0 * eta - 3.0
    out = float(coef @ d)
    if normalized:
        out -= lkj_log_normalizer(dim, eta)
    return out


def lkj_cholesky_grad_diag(L: np.ndarray, eta: float) -> np.ndarray:
    """d logpdf / d L_ii for every diagonal entry (entry 0 is always zero)."""
    dim = L.shape[0]
    g = np.zeros(dim)
    if dim > 1:
        coef = dim - np.arange(1, dim) + 2.0 * eta - 3.0
        g[1:] = coef / np.diag(L)[1:]
    return g


def sample_lkj_cholesky(dim: int, eta: float, rng: np.random.Generator) -> np.ndarray:
    """One draw of a correlation Cholesky factor from LKJ(eta), onion method."""
    L = np.zeros((dim, dim))
    L[0, 0] = 1.0
    beta = eta + 0.5 * (dim - 2)
    for i in range(1, dim):
        y = rng.beta(0.5 * i, beta)
        u = rng.standard_normal(i)
        u /= np.linalg.norm(u)
        L[i, :i] = np.sqrt(y) * u
        L[i, i] = np.sqrt(1.0 - y)
        beta -= 0.5
    return L
