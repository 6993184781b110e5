"""Convergence diagnostics: rank-normalised split R-hat and effective sample size."""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri
from scipy.stats import rankdata


def _as_chains(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ValueError("expected an array of shape (chains, draws)")
    return x


def split_chains(x) -> np.ndarray:
    """Halve every chain; an odd middle draw is dropped."""
    x = _as_chains(x)
    half = x.shape[1] // 2
    return np.concatenate([x[:, :half], x[:, x.shape[1] - half:]], axis=0)


def rank_normalize(x) -> np.ndarray:
    """Blom-style normal scores of the pooled ranks (ties get average ranks)."""
    x = _as_chains(x)
    r = rankdata(x, method="average").reshape(x.shape)
    return ndtri((r - 0.375) / (x.size + 0.25))


def _rhat_raw(x: np.ndarray) -> float:
    m, n = x.shape
    if m < 2 or n < 2:
        return np.nan
    chain_means = x.mean(axis=1)
    w = x.var(axis=1, ddof=1).mean()
    b = n * chain_means.var(ddof=1)
    if w == 0:
        return 1.0 if b == 0 else np.inf
    var_hat = (n - 1) / n * w + b / n
    return float(np.sqrt(var_hat / w))


def rhat(x) -> float:
    """Rank-normalised split R-hat (max of bulk and folded versions).

    Needs at least two chains; returns NaN otherwise.
    """
    x = _as_chains(x)
    if x.shape[0] < 2:
        return np.nan
    s = split_chains(x)
    bulk = _rhat_raw(rank_normalize(s))
    folded = _rhat_raw(rank_normalize(np.abs(s - np.median(s))))
    return float(max(bulk, folded))


def _autocov(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance of each row via FFT."""
    n = x.shape[1]
    size = 1 << int(np.ceil(np.log2(2 * n)))
    centered = x - x.mean(axis=1, keepdims=True)
    f = np.fft.rfft(centered, n=size, axis=1)
    acov = np.fft.irfft(f * np.conj(f), n=size, axis=1)[:, :n]
    return acov / n


def _ess_raw(x: np.ndarray) -> float:
    """Geyer initial-monotone-sequence ESS over chains of equal length."""
    m, n = x.shape
    if n < 4:
        return np.nan
    acov = _autocov(x)
    chain_mean = x.mean(axis=1)
    mean_var = acov[:, 0].mean() * n / (n - 1)
    var_plus = mean_var * (n - 1) / n
    if m > 1:
        var_plus += chain_mean.var(ddof=1)
    if var_plus == 0:
        return float(m * n)
    rho = np.zeros(n)
    rho[0] = 1.0
    rho_even = 1.0
    rho_odd = 1.0 - (mean_var - acov[:, 1].mean()) / var_plus
    rho[1] = rho_odd
    t = 1
    while t < n - 3 and rho_even + rho_odd > 0:
        rho_even = 1.0 - (mean_var - acov[:, t + 1].mean()) / var_plus
        rho_odd = 1.0 - (mean_var - acov[:, t + 2].mean()) / var_plus
        if rho_even + rho_odd >= 0:
            rho[t + 1] = rho_even
            rho[t + 2] = rho_odd
        t += 2
    max_t = t - 2
    if rho_even > 0:
        rho[max_t + 1] = rho_even
    # enforce a monotone sequence of pair sums
    t = 1
    while t <= max_t - 2:
        if rho[t + 1] + rho[t + 2] > rho[t - 1] + rho[t]:
            rho[t + 1] = (rho[t - 1] + rho[t]) / 2.0
            rho[t + 2] = rho[t + 1]
        t += 2
    total = m * n
    tau = -1.0 + 2.0 * rho[:max_t + 1].sum() + rho[max_t + 1:max_t + 2].sum()
    tau = max(tau, 1.0 / np.log10(total))
    return float(total / tau)


def ess_bulk(x) -> float:
    return _ess_raw(rank_normalize(split_chains(x)))


def ess_mean(x) -> float:
    return _ess_raw(split_chains(x))


def mcse_mean(x) -> float:
    x = _as_chains(x)
    return float(x.std(ddof=1) / np.sqrt(ess_mean(x)))


def diagnostics(samples, names=None) -> dict:
    """Per-coordinate ``{"rhat", "ess_bulk"}`` for an array (chains, draws, dim).

    With a single chain R-hat is reported as None.
    """
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 2:
        samples = samples[:, :, None]
    dim = samples.shape[2]
    names = list(names) if names is not None else [f"theta[{i}]" for i in range(dim)]
    out = {}
    for i, name in enumerate(names):
        x = samples[:, :, i]
        r = rhat(x) if samples.shape[0] > 1 else None
        out[name] = {"rhat": None if r is None or np.isnan(r) else float(r),
                     "ess_bulk": float(ess_bulk(x))}
    return out
