"""Forecast error metrics."""

from __future__ import annotations

import numpy as np


def _pair(y_true, y_pred) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(y_true, dtype=float).ravel()
    b = np.asarray(y_pred, dtype=float).ravel()
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size == 0:
        raise ValueError("metrics need at least one value")
    return a, b


def mse(y_true, y_pred) -> float:
    a, b = _pair(y_true, y_pred)
    return float(np.mean((a - b) ** 2))


def mae(y_true, y_pred) -> float:
    a, b = _pair(y_true, y_pred)
    return float(np.mean(np.abs(a - b)))


def directional_accuracy(daily_true, daily_pred) -> float:
    """Share of day-over-day changes whose sign (-, 0, +) is predicted."""
    a, b = _pair(daily_true, daily_pred)
    if a.size < 2:
        raise ValueError("directional accuracy needs at least two days")
    return float(np.mean(np.sign(np.diff(a)) == np.sign(np.diff(b))))
