"""Warmup adaptation: dual-averaging step size and windowed metric estimation."""

from __future__ import annotations

import numpy as np


class DualAveraging:
    """Nesterov dual averaging of ``log(step_size)`` toward a target acceptance."""

    def __init__(self, step_size: float, target_accept: float = 0.8, gamma: float = 0.05,
                 t0: float = 10.0, kappa: float = 0.75):
        self.target = target_accept
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.restart(step_size)

    def restart(self, step_size: float) -> None:
        self.mu = np.log(10.0 * step_size)
        self.s_bar = 0.0
        self.x_bar = 0.0
        self.counter = 0

    def update(self, accept_stat: float) -> float:
        self.counter += 1
        accept_stat = min(1.0, accept_stat)
        eta = 1.0 / (self.counter + self.t0)
        self.s_bar = (1.0 - eta) * self.s_bar + eta * (self.target - accept_stat)
        x = self.mu - self.s_bar * np.sqrt(self.counter) / self.gamma
        x_eta = self.counter ** (-self.kappa)
        self.x_bar = (1.0 - x_eta) * self.x_bar + x_eta * x
        return float(np.exp(x))

    @property
    def final_step_size(self) -> float:
        return float(np.exp(self.x_bar))


class WelfordEstimator:
    """Running mean and (co)variance."""

    def __init__(self, dim: int, dense: bool):
        self.dense = dense
        self.dim = dim
        self.reset()

    def reset(self) -> None:
        self.n = 0
        self.mean = np.zeros(self.dim)
        self.m2 = np.zeros((self.dim, self.dim)) if self.dense else np.zeros(self.dim)

    def add(self, x: np.ndarray) -> None:
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        if self.dense:
            self.m2 += np.outer(x - self.mean, delta)
        else:
            self.m2 += delta * (x - self.mean)

    def regularized(self, previous: np.ndarray | None = None) -> np.ndarray:
        """Sample (co)variance shrunk toward ``1e-3`` times identity.

        A dense estimate from fewer draws than dimensions is singular, so
        when ``previous`` is given the dense estimate is instead pooled with
        it as if it were worth ``dim`` draws.
        """
        n = self.n
        var = self.m2 / (n - 1)
        if self.dense:
            var = 0.5 * (var + var.T)
            if previous is not None:
                w = n / (n + self.dim)
                return w * var + (1.0 - w) * previous
            w = n / (n + 5.0)
            return w * var + 1e-3 * (5.0 / (n + 5.0)) * np.eye(self.dim)
        w = n / (n + 5.0)
        return w * var + 1e-3 * (5.0 / (n + 5.0))


def adaptation_windows(num_warmup: int, init_buffer: int = 75, term_buffer: int = 50,
                       base_window: int = 25) -> list[tuple[int, int]]:
    """Half-open iteration ranges over which the metric is estimated.

    Follows the usual doubling scheme: a fast initial buffer, slow windows
    of doubling size, a final fast buffer. Short warmups are split
    15% / 75% / 10%.
    """
    if num_warmup < 20:
        return []
    if init_buffer + base_window + term_buffer > num_warmup:
        init_buffer = int(0.15 * num_warmup)
        term_buffer = int(0.1 * num_warmup)
        base_window = num_warmup - (init_buffer + term_buffer)
    end_slow = num_warmup - term_buffer
    windows = []
    start, size = init_buffer, base_window
    while start < end_slow:
        end = start + size
        if end + 2 * size > end_slow:
            end = end_slow
        windows.append((start, end))
        start, size = end, size * 2
    return windows
