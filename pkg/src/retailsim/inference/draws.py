"""Posterior draw containers and their on-disk format.

Files use the :mod:`retailsim.blobfile` container with magic
``b"RSPOST\\x00\\x01"``. The header carries the config hash, seed and
dimensions plus whatever metadata the caller attaches; the arrays are the
draws ``(chains, draws, dim)`` followed by sampler statistics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..blobfile import read_blob, write_blob
from .diagnostics import diagnostics as _diagnostics

MAGIC = b"RSPOST\x00\x01"
FORMAT_VERSION = 1


@dataclass
class PosteriorDraws:
    samples: np.ndarray                 # (chains, draws, dim), unconstrained
    names: list | None = None
    sampler_stats: dict = field(default_factory=dict)
    step_size: np.ndarray | None = None
    inv_metric: np.ndarray | None = None
    failed: bool = False
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.samples.ndim != 3:
            raise ValueError("samples must have shape (chains, draws, dim)")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("posterior draws contain non-finite values")
        if self.names is not None and len(self.names) != self.dim:
            raise ValueError("names do not match the draw dimension")

    @property
    def chain_count(self) -> int:
        return self.samples.shape[0]

    @property
    def samples_per_chain(self) -> int:
        return self.samples.shape[1]

    @property
    def dim(self) -> int:
        return self.samples.shape[2]

    @property
    def flat(self) -> np.ndarray:
        """``S x dim`` matrix, chain-major."""
        return self.samples.reshape(-1, self.dim)

    @property
    def chain_labels(self) -> np.ndarray:
        return np.repeat(np.arange(self.chain_count), self.samples_per_chain)

    def __len__(self):
        return self.chain_count * self.samples_per_chain

    def diagnostics(self) -> dict:
        return _diagnostics(self.samples, self.names)

    def divergences(self) -> np.ndarray:
        div = self.sampler_stats.get("divergent")
        if div is None:
            return np.zeros(self.chain_count, dtype=int)
        return np.asarray(div).sum(axis=1).astype(int)

    def thinned(self, count: int) -> np.ndarray:
        """About ``count`` evenly spaced rows of :attr:`flat` (all of them if fewer)."""
        flat = self.flat
        if count >= flat.shape[0]:
            return flat
        idx = np.linspace(0, flat.shape[0] - 1, count).round().astype(int)
        return flat[idx]


def save_posterior(path, draws: PosteriorDraws, header: dict | None = None) -> None:
    arrays = {"samples": draws.samples}
    for key, val in draws.sampler_stats.items():
        arrays[f"stats.{key}"] = np.asarray(val, dtype=float)
    if draws.step_size is not None:
        arrays["step_size"] = draws.step_size
    if draws.inv_metric is not None:
        arrays["inv_metric"] = draws.inv_metric
    meta = dict(header or {})
    meta.update({
        "format_version": FORMAT_VERSION,
        "chains": draws.chain_count,
        "draws": draws.samples_per_chain,
        "dim": draws.dim,
        "names": draws.names,
        "failed": draws.failed,
        "info": draws.info,
    })
    write_blob(path, MAGIC, meta, arrays)


def load_posterior(path) -> tuple[PosteriorDraws, dict]:
    """Inverse of :func:`save_posterior`; returns the draws and the full header."""
    meta, arrays = read_blob(path, MAGIC)
    stats = {k[len("stats."):]: v for k, v in arrays.items() if k.startswith("stats.")}
    draws = PosteriorDraws(arrays["samples"], meta.get("names"), stats,
                           arrays.get("step_size"), arrays.get("inv_metric"),
                           bool(meta.get("failed", False)), meta.get("info", {}))
    return draws, meta
