"""Generative spatial-demand model.

Daily quantity of product ``j`` in region ``i`` is a normal truncated to
``[0, inf)`` whose location is linear in day, region, product and lagged
product revenue features::

    q_ij ~ TN(x'w + b, sigma_q),   w = [w_t | w_r | w_p | w_s]

with hierarchical priors on the weight blocks (multivariate normal with
LKJ-correlated covariance for products and weekdays, half-Cauchy scales,
a truncated normal on the autoregressive weight and an inverse gamma on
``sigma_q``).

Everything a gradient sampler needs lives here: the parameter packing
into an unconstrained vector, the log-density and its exact gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular
from scipy.special import gammaln

from . import lkj
from .truncnorm import (LOG_SQRT_2PI, log_ndtr_fast, mills_ratio,
                        sample_trunc_normal, trunc_normal_logpdf)

N_DAYS = 7
DEFAULT_DAY_MEANS = (5.0, 5.0, 5.0, 5.0, 10.0, 15.0, 0.0)
_LOG_2_OVER_PI = np.log(2.0 / np.pi)


@dataclass
class Hyperparams:
    """Prior hyperparameters. Defaults reproduce the published prior settings;
    ``b_scale`` and ``lkj_eta`` are not given there and are our choices."""

    n_regions: int
    n_products: int
    mu_r: np.ndarray = None
    gamma_r: float = 25.0
    delta_p: np.ndarray = None
    Gamma_p: np.ndarray = None
    sigma_p: float = 2.5
    delta_t: np.ndarray = None
    Gamma_t: np.ndarray = None
    sigma_t: float = 2.5
    phi_s: float = 1.0
    psi_s: float = 2.5
    alpha_q: float = 1.0
    beta_q: float = 1.0
    b_scale: float = 10.0
    lkj_eta: float = 2.0
    hierarchical: bool = False

    def __post_init__(self):
        n, k = self.n_regions, self.n_products
        if self.mu_r is None:
            self.mu_r = np.zeros(n)
        if self.delta_p is None:
            self.delta_p = np.full(k, 2.5)
        if self.Gamma_p is None:
            self.Gamma_p = 25.0 * np.eye(k)
        if self.delta_t is None:
            self.delta_t = np.array(DEFAULT_DAY_MEANS)
        if self.Gamma_t is None:
            self.Gamma_t = 10.0 * np.eye(N_DAYS)
        self.mu_r = np.asarray(self.mu_r, dtype=float).reshape(n)
        self.delta_p = np.asarray(self.delta_p, dtype=float).reshape(k)
        self.Gamma_p = np.asarray(self.Gamma_p, dtype=float).reshape(k, k)
        self.delta_t = np.asarray(self.delta_t, dtype=float).reshape(N_DAYS)
        self.Gamma_t = np.asarray(self.Gamma_t, dtype=float).reshape(N_DAYS, N_DAYS)
        for name in ("gamma_r", "sigma_p", "sigma_t", "phi_s", "psi_s",
                     "alpha_q", "beta_q", "b_scale", "lkj_eta"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v <= 0:
                raise ValueError(f"hyperparameter {name} must be positive, got {v}")
            setattr(self, name, v)
        for name in ("Gamma_p", "Gamma_t"):
            m = getattr(self, name)
            if not np.allclose(m, m.T) or np.any(np.linalg.eigvalsh(m) <= 0):
                raise ValueError(f"{name} must be symmetric positive definite")

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.tolist() if isinstance(v, np.ndarray) else v
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        return cls(**d)


@dataclass
class ModelParams:
    w_r: np.ndarray
    w_p: np.ndarray
    mu_p: np.ndarray
    prod_corr_chol: np.ndarray
    prod_stds: np.ndarray
    w_t: np.ndarray
    mu_t: np.ndarray
    temp_corr_chol: np.ndarray
    temp_stds: np.ndarray
    w_s: float
    mu_s: float
    sigma_s: float
    b: float
    sigma_q: float
    w_r_cell: Optional[np.ndarray] = None

    @property
    def n_regions(self) -> int:
        return self.w_r.shape[0]

    @property
    def n_products(self) -> int:
        return self.w_p.shape[0]

    @property
    def weights(self) -> np.ndarray:
        """Weight vector in feature order ``[w_t | w_r | w_p | w_s]``."""
        return np.concatenate([self.w_t, self.w_r, self.w_p, [self.w_s]])

    def region_cell_weights(self) -> np.ndarray:
        """``n x k`` region contribution per cell (``w_r`` broadcast when flat)."""
        if self.w_r_cell is not None:
            return self.w_r_cell
        return np.repeat(self.w_r[:, None], self.n_products, axis=1)

    def check(self) -> None:
        """Raise ``ValueError`` when an invariant does not hold."""
        for name, L in (("prod_corr_chol", self.prod_corr_chol),
                        ("temp_corr_chol", self.temp_corr_chol)):
            if not np.allclose(L, np.tril(L)):
                raise ValueError(f"{name} is not lower triangular")
            if np.any(np.diag(L) <= 0):
                raise ValueError(f"{name} needs a strictly positive diagonal")
            if not np.allclose(np.sum(L * L, axis=1), 1.0, atol=1e-8):
                raise ValueError(f"{name} does not factor a correlation matrix")
        if np.any(self.prod_stds <= 0) or np.any(self.temp_stds <= 0):
            raise ValueError("standard deviations must be positive")
        if self.w_s < 0:
            raise ValueError("w_s must be non-negative")
        if self.mu_s <= 0 or self.sigma_s <= 0 or self.sigma_q <= 0:
            raise ValueError("mu_s, sigma_s and sigma_q must be positive")

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            out[f.name] = v.tolist() if isinstance(v, np.ndarray) else float(v)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ModelParams":
        kw = {}
        for f in fields(cls):
            if f.name not in d:
                continue
            v = d[f.name]
            kw[f.name] = np.asarray(v, dtype=float) if isinstance(v, list) else float(v)
        return cls(**kw)


# ---------------------------------------------------------------------------
# densities of individual prior terms


def _half_cauchy_logpdf(x, scale):
    x = np.asarray(x, dtype=float)
    return np.sum(_LOG_2_OVER_PI - np.log(scale) - np.log1p((x / scale) ** 2))


def _half_cauchy_grad(x, scale):
    return -2.0 * x / (scale * scale + x * x)


def _mvn_scaled_chol(x, mean, stds, L):
    """log N(x | mean, diag(stds) L L' diag(stds)) and its partial gradients."""
    u = (x - mean) / stds
    v = solve_triangular(L, u, lower=True, check_finite=False)
    a = solve_triangular(L.T, v, lower=False, check_finite=False)
    d = x.shape[0]
    val = (-0.5 * v @ v - np.log(stds).sum() - np.log(np.diag(L)).sum()
           - d * LOG_SQRT_2PI)
    gx = -a / stds
    gs = (a * u - 1.0) / stds
    gL = np.tril(np.outer(a, v))
    gL[np.diag_indices(d)] -= 1.0 / np.diag(L)
    return val, gx, -gx, gs, gL


class _FixedMvn:
    """Gaussian with a fixed covariance, Cholesky-factored once."""

    def __init__(self, mean, cov):
        self.mean = np.asarray(mean, dtype=float)
        self.chol = cho_factor(np.asarray(cov, dtype=float), lower=True)
        self.logdet = 2.0 * np.log(np.diag(self.chol[0])).sum()
        self.d = self.mean.shape[0]

    def logpdf_grad(self, x):
        r = x - self.mean
        a = cho_solve(self.chol, r, check_finite=False)
        return -0.5 * r @ a - 0.5 * self.logdet - self.d * LOG_SQRT_2PI, -a


def _mvn_marginal(w, delta, Gamma, stds, L):
    """log N(w | delta, diag(stds) L L' diag(stds) + Gamma) with gradients
    for ``w``, ``stds`` and ``L``, plus the conditional moments of the mean
    integrated out: ``E[mu | w]`` and ``Cov[mu | w]``."""
    R = L @ L.T
    C = stds[:, None] * R * stds[None, :] + Gamma
    cf = cho_factor(C, lower=True, check_finite=False)
    r = w - delta
    a = cho_solve(cf, r, check_finite=False)
    d = w.shape[0]
    val = -0.5 * r @ a - np.log(np.diag(cf[0])).sum() - d * LOG_SQRT_2PI
    Cinv = cho_solve(cf, np.eye(d), check_finite=False)
    G = 0.5 * (np.outer(a, a) - Cinv)          # d val / d C
    gs = 2.0 * (G * R) @ stds
    GR = stds[:, None] * G * stds[None, :]     # d val / d R
    gL = np.tril(2.0 * GR @ L)
    mean = delta + Gamma @ a
    cov = Gamma - Gamma @ Cinv @ Gamma
    return val, -a, gs, gL, mean, 0.5 * (cov + cov.T)


# ---------------------------------------------------------------------------
# log prior / likelihood on constrained parameters


class _PriorTerms:
    """Fixed-covariance pieces of the prior, built once per hyperparameter set."""

    def __init__(self, hyper: Hyperparams):
        self.hyper = hyper
        self.mu_p_prior = _FixedMvn(hyper.delta_p, hyper.Gamma_p)
        self.mu_t_prior = _FixedMvn(hyper.delta_t, hyper.Gamma_t)
        self.lkj_norm_p = lkj.lkj_log_normalizer(hyper.n_products, hyper.lkj_eta)
        self.lkj_norm_t = lkj.lkj_log_normalizer(N_DAYS, hyper.lkj_eta)

    def value_and_grad(self, p: ModelParams, collapsed: bool = False) -> tuple[float, dict]:
        """Log prior and its gradient by parameter name.

        With ``collapsed`` the block means ``mu_p`` and ``mu_t`` are
        integrated out: the weights get the marginal Gaussian prior and the
        returned dict holds the conditional mean moments under
        ``cond_mu_p``/``cond_mu_t`` instead of gradients for the means.
        """
        h = self.hyper
        g = {}
        total = 0.0

        # region block (optionally with per-cell weights around the region mean)
        r = p.w_r - h.mu_r
        total += -0.5 * r @ r / h.gamma_r - 0.5 * r.size * np.log(2 * np.pi * h.gamma_r)
        g["w_r"] = -r / h.gamma_r
        if h.hierarchical:
            if p.w_r_cell is None:
                raise ValueError("hierarchical model needs w_r_cell")
            rc = p.w_r_cell - p.w_r[:, None]
            total += -0.5 * np.sum(rc * rc) / h.gamma_r - 0.5 * rc.size * np.log(2 * np.pi * h.gamma_r)
            g["w_r_cell"] = -rc / h.gamma_r
            g["w_r"] = g["w_r"] + rc.sum(axis=1) / h.gamma_r

        for blk, prior_mu, sig, lkj_norm in (("p", self.mu_p_prior, h.sigma_p, self.lkj_norm_p),
                                             ("t", self.mu_t_prior, h.sigma_t, self.lkj_norm_t)):
            w = getattr(p, f"w_{blk}")
            L = p.prod_corr_chol if blk == "p" else p.temp_corr_chol
            s = p.prod_stds if blk == "p" else p.temp_stds
            if collapsed:
                Gamma = h.Gamma_p if blk == "p" else h.Gamma_t
                val, gw, gs, gL, m, c = _mvn_marginal(w, prior_mu.mean, Gamma, s, L)
                g[f"cond_mu_{blk}"] = (m, c)
                total += val
            else:
                mu = getattr(p, f"mu_{blk}")
                val, gw, gmu, gs, gL = _mvn_scaled_chol(w, mu, s, L)
                v2, gmu2 = prior_mu.logpdf_grad(mu)
                total += val + v2
                g[f"mu_{blk}"] = gmu + gmu2
            total += lkj.lkj_cholesky_logpdf(L, h.lkj_eta, normalized=False) - lkj_norm
            gL[np.diag_indices_from(gL)] += lkj.lkj_cholesky_grad_diag(L, h.lkj_eta)
            total += _half_cauchy_logpdf(s, sig)
            gs = gs + _half_cauchy_grad(s, sig)
            g[f"w_{blk}"] = gw
            g[f"L_{blk}"] = gL
            g[f"s_{blk}"] = gs

        # autoregressive weight
        sd = p.sigma_s
        z = (p.w_s - p.mu_s) / sd
        a = p.mu_s / sd
        lam = float(mills_ratio(a))
        total += float(trunc_normal_logpdf(p.w_s, p.mu_s, sd))
        g["w_s"] = -z / sd
        g["mu_s"] = z / sd - lam / sd + float(_half_cauchy_grad(p.mu_s, h.phi_s))
        g["sigma_s"] = (z * z - 1.0 + lam * a) / sd + float(_half_cauchy_grad(sd, h.psi_s))
        total += _half_cauchy_logpdf(p.mu_s, h.phi_s) + _half_cauchy_logpdf(sd, h.psi_s)

        # observation noise and bias
        aq, bq, sq = h.alpha_q, h.beta_q, p.sigma_q
        total += aq * np.log(bq) - gammaln(aq) - (aq + 1.0) * np.log(sq) - bq / sq
        g["sigma_q"] = -(aq + 1.0) / sq + bq / (sq * sq)
        total += -0.5 * (p.b / h.b_scale) ** 2 - np.log(h.b_scale) - LOG_SQRT_2PI
        g["b"] = -p.b / h.b_scale**2
        return float(total), g


def log_prior(params: ModelParams, hyper: Hyperparams) -> float:
    """Log prior density of constrained parameters; ``-inf`` off the support."""
    try:
        params.check()
    except ValueError:
        return -np.inf
    return _PriorTerms(hyper).value_and_grad(params)[0]


@dataclass
class Design:
    """Design matrix in ``[x_t | x_r | x_p | x_s]`` column order plus decoded indices."""

    X: np.ndarray
    y: np.ndarray
    n_regions: int
    n_products: int
    day: np.ndarray = field(init=False)
    region: np.ndarray = field(init=False)
    product: np.ndarray = field(init=False)
    xs: np.ndarray = field(init=False)

    def __post_init__(self):
        n, k = self.n_regions, self.n_products
        self.X = np.asarray(self.X, dtype=float).reshape(-1, N_DAYS + n + k + 1)
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        if self.X.shape[0] != self.y.shape[0]:
            raise ValueError(f"X has {self.X.shape[0]} rows but y has {self.y.shape[0]}")
        if self.X.shape[0]:
            self.day = np.argmax(self.X[:, :N_DAYS], axis=1)
            self.region = np.argmax(self.X[:, N_DAYS:N_DAYS + n], axis=1)
            self.product = np.argmax(self.X[:, N_DAYS + n:N_DAYS + n + k], axis=1)
        else:
            self.day = self.region = self.product = np.zeros(0, dtype=int)
        self.xs = self.X[:, -1].copy()

    def __len__(self):
        return self.y.shape[0]

    def subset(self, rows) -> "Design":
        return Design(self.X[rows], self.y[rows], self.n_regions, self.n_products)


def location(params: ModelParams, design: Design) -> np.ndarray:
    """Truncated-normal location ``x'w + b`` for every row."""
    region_part = (params.w_r_cell[design.region, design.product]
                   if params.w_r_cell is not None else params.w_r[design.region])
    return (params.w_t[design.day] + region_part + params.w_p[design.product]
            + params.w_s * design.xs + params.b)


def _likelihood_value_and_grad(params: ModelParams, design: Design, need_grad=True):
    if len(design) == 0:
        return 0.0, None
    mu = location(params, design)
    sq = params.sigma_q
    a = mu / sq
    z = (design.y - mu) / sq
    lc = log_ndtr_fast(a)
    val = float(-0.5 * z @ z - design.y.size * (np.log(sq) + LOG_SQRT_2PI) - lc.sum())
    if not need_grad:
        return val, None
    lam = mills_ratio(a, lc)
    g_mu = (z - lam) / sq
    n, k = design.n_regions, design.n_products
    g = {
        "w_t": np.bincount(design.day, weights=g_mu, minlength=N_DAYS),
        "w_p": np.bincount(design.product, weights=g_mu, minlength=k),
        "w_s": float(g_mu @ design.xs),
        "b": float(g_mu.sum()),
        "sigma_q": float(np.sum(z * z - 1.0 + lam * a) / sq),
    }
    if params.w_r_cell is not None:
        cell = design.region * k + design.product
        g["w_r_cell"] = np.bincount(cell, weights=g_mu, minlength=n * k).reshape(n, k)
    else:
        g["w_r"] = np.bincount(design.region, weights=g_mu, minlength=n)
    return val, g


def log_likelihood(params: ModelParams, X, y=None) -> float:
    """Sum of truncated-normal log-densities of the observed quantities.

    ``X`` is either a :class:`Design` or a feature matrix (then ``y`` is required).
    """
    if not isinstance(X, Design):
        X = Design(X, y, params.n_regions, params.n_products)
    return _likelihood_value_and_grad(params, X, need_grad=False)[0]


# ---------------------------------------------------------------------------
# unconstrained parameterisation


class ParamLayout:
    """Slices of the flat unconstrained vector.

    Positive quantities (standard deviations, ``w_s``, ``mu_s``, ``sigma_s``,
    ``sigma_q``) are stored as logs; correlation factors as arctanh of
    canonical partial correlations; everything else as is.
    """

    def __init__(self, n_regions: int, n_products: int, hierarchical: bool = False,
                 collapsed: bool = False):
        self.n_regions = n = n_regions
        self.n_products = k = n_products
        self.hierarchical = hierarchical
        self.collapsed = collapsed
        sizes = [("w_r", n)]
        if hierarchical:
            sizes.append(("w_r_cell", n * k))
        sizes += [("w_p", k), ("mu_p", k), ("cpc_p", lkj.n_free(k)), ("log_s_p", k),
                  ("w_t", N_DAYS), ("mu_t", N_DAYS), ("cpc_t", lkj.n_free(N_DAYS)),
                  ("log_s_t", N_DAYS), ("log_w_s", 1), ("log_mu_s", 1),
                  ("log_sigma_s", 1), ("b", 1), ("log_sigma_q", 1)]
        if collapsed:
            sizes = [(name, size) for name, size in sizes if name not in ("mu_p", "mu_t")]
        self.slices = {}
        start = 0
        for name, size in sizes:
            self.slices[name] = slice(start, start + size)
            start += size
        self.dim = start

    def names(self) -> list[str]:
        out = []
        for name, sl in self.slices.items():
            size = sl.stop - sl.start
            out += [name] if size == 1 else [f"{name}[{i}]" for i in range(size)]
        return out

    def weight_indices(self) -> np.ndarray:
        """Positions of the feature weights ``w_t, w_r, w_p`` (``w_s`` is on log scale)."""
        idx = [np.arange(self.slices[s].start, self.slices[s].stop) for s in ("w_t", "w_r", "w_p")]
        return np.concatenate(idx)

    def unpack(self, theta: np.ndarray) -> tuple[ModelParams, float]:
        """Constrained parameters and the log-Jacobian of the transform.

        A collapsed layout has no block means; they come back as NaN.
        """
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise ValueError(f"expected vector of length {self.dim}, got {theta.shape}")
        s = self.slices
        k = self.n_products
        Lp, jp = lkj.corr_cholesky(theta[s["cpc_p"]], k)
        Lt, jt = lkj.corr_cholesky(theta[s["cpc_t"]], N_DAYS)
        logs = np.concatenate([theta[s[name]] for name in
                               ("log_s_p", "log_s_t", "log_w_s", "log_mu_s",
                                "log_sigma_s", "log_sigma_q")])
        params = ModelParams(
            w_r=theta[s["w_r"]].copy(),
            w_p=theta[s["w_p"]].copy(),
            mu_p=self._mean(theta, "mu_p", k),
            prod_corr_chol=Lp,
            prod_stds=np.exp(theta[s["log_s_p"]]),
            w_t=theta[s["w_t"]].copy(),
            mu_t=self._mean(theta, "mu_t", N_DAYS),
            temp_corr_chol=Lt,
            temp_stds=np.exp(theta[s["log_s_t"]]),
            w_s=float(np.exp(theta[s["log_w_s"]][0])),
            mu_s=float(np.exp(theta[s["log_mu_s"]][0])),
            sigma_s=float(np.exp(theta[s["log_sigma_s"]][0])),
            b=float(theta[s["b"]][0]),
            sigma_q=float(np.exp(theta[s["log_sigma_q"]][0])),
            w_r_cell=theta[s["w_r_cell"]].reshape(self.n_regions, k).copy()
            if self.hierarchical else None,
        )
        return params, float(jp + jt + logs.sum())

    def _mean(self, theta, name, size):
        if self.collapsed:
            return np.full(size, np.nan)
        return theta[self.slices[name]].copy()

    def full(self) -> "ParamLayout":
        """The layout with the block means present."""
        return ParamLayout(self.n_regions, self.n_products, self.hierarchical)

    def pack(self, params: ModelParams) -> np.ndarray:
        s = self.slices
        theta = np.empty(self.dim)
        theta[s["w_r"]] = params.w_r
        if self.hierarchical:
            if params.w_r_cell is None:
                raise ValueError("hierarchical layout needs w_r_cell")
            theta[s["w_r_cell"]] = params.w_r_cell.reshape(-1)
        theta[s["w_p"]] = params.w_p
        if not self.collapsed:
            theta[s["mu_p"]] = params.mu_p
            theta[s["mu_t"]] = params.mu_t
        theta[s["cpc_p"]] = lkj.corr_cholesky_inverse(params.prod_corr_chol)
        theta[s["log_s_p"]] = np.log(params.prod_stds)
        theta[s["w_t"]] = params.w_t
        theta[s["cpc_t"]] = lkj.corr_cholesky_inverse(params.temp_corr_chol)
        theta[s["log_s_t"]] = np.log(params.temp_stds)
        theta[s["log_w_s"]] = np.log(params.w_s)
        theta[s["log_mu_s"]] = np.log(params.mu_s)
        theta[s["log_sigma_s"]] = np.log(params.sigma_s)
        theta[s["b"]] = params.b
        theta[s["log_sigma_q"]] = np.log(params.sigma_q)
        return theta

    def initial_point(self, hyper: Hyperparams) -> np.ndarray:
        """A central, deterministic starting point: prior means, unit scales."""
        k = self.n_products
        theta = np.zeros(self.dim)
        s = self.slices
        theta[s["w_r"]] = hyper.mu_r
        if self.hierarchical:
            theta[s["w_r_cell"]] = np.repeat(hyper.mu_r, k)
        theta[s["w_p"]] = hyper.delta_p
        theta[s["w_t"]] = hyper.delta_t
        if not self.collapsed:
            theta[s["mu_p"]] = hyper.delta_p
            theta[s["mu_t"]] = hyper.delta_t
        return theta


class Posterior:
    """Unnormalised log posterior over the unconstrained vector.

    With ``collapsed`` the block means ``mu_p`` and ``mu_t`` are integrated
    out analytically. The marginal posterior of everything else is
    unchanged, but the sampler no longer has to cross the funnel between a
    block mean and its scales; :meth:`complete` draws the means back from
    their exact Gaussian conditional.

    Picklable, so chains may run in worker processes.
    """

    def __init__(self, design: Design, hyper: Hyperparams, collapsed: bool = False):
        if (design.n_regions, design.n_products) != (hyper.n_regions, hyper.n_products):
            raise ValueError("design and hyperparameters disagree on dimensions")
        self.design = design
        self.hyper = hyper
        self.collapsed = collapsed
        self.layout = ParamLayout(hyper.n_regions, hyper.n_products, hyper.hierarchical,
                                  collapsed)
        self._prior = _PriorTerms(hyper)

    @property
    def dim(self) -> int:
        return self.layout.dim

    def log_prior(self, params: ModelParams) -> float:
        return self._prior.value_and_grad(params, self.collapsed)[0]

    def complete(self, theta, rng: np.random.Generator) -> np.ndarray:
        """Full-layout vector: ``theta`` plus block means drawn from
        ``p(mu | rest, data)``. Identity for an uncollapsed posterior."""
        theta = np.asarray(theta, dtype=float)
        if not self.collapsed:
            return theta.copy()
        params, _ = self.layout.unpack(theta)
        _, g = self._prior.value_and_grad(params, collapsed=True)
        mus = {}
        for blk in ("p", "t"):
            m, c = g[f"cond_mu_{blk}"]
            mus[f"mu_{blk}"] = rng.multivariate_normal(m, c, method="eigh")
        return self.layout.full().pack(replace(params, **mus))

    def log_likelihood(self, params: ModelParams) -> float:
        return _likelihood_value_and_grad(params, self.design, need_grad=False)[0]

    def logp(self, theta) -> float:
        return self.logp_and_grad(theta, need_grad=False)[0]

    def grad(self, theta) -> np.ndarray:
        return self.logp_and_grad(theta)[1]

    def logp_and_grad(self, theta, need_grad: bool = True):
        """``(log_prior + log_likelihood + log_jacobian, gradient)``.

        Non-finite evaluations return ``(-inf, zeros)``.
        """
        theta = np.asarray(theta, dtype=float)
        zero = np.zeros(self.dim)
        if not np.all(np.isfinite(theta)):
            return -np.inf, zero
        with np.errstate(all="ignore"):
            try:
                params, log_jac = self.layout.unpack(theta)
                lp, gp = self._prior.value_and_grad(params, self.collapsed)
                ll, gl = _likelihood_value_and_grad(params, self.design, need_grad)
            except (FloatingPointError, np.linalg.LinAlgError, ValueError):
                return -np.inf, zero
            total = lp + ll + log_jac
            if not np.isfinite(total):
                return -np.inf, zero
            if not need_grad:
                return float(total), None
            grad = self._chain_rule(theta, params, gp, gl)
        if not np.all(np.isfinite(grad)):
            return -np.inf, zero
        return float(total), grad

    def _chain_rule(self, theta, params, gp, gl):
        s = self.layout.slices
        g = np.zeros(self.dim)
        gl = gl or {}

        def tot(name):
            a = gp.get(name, 0.0)
            b = gl.get(name, 0.0)
            return a + b

        g[s["w_r"]] = tot("w_r")
        if self.layout.hierarchical:
            g[s["w_r_cell"]] = np.reshape(tot("w_r_cell"), -1)
        g[s["w_p"]] = tot("w_p")
        g[s["w_t"]] = tot("w_t")
        if not self.collapsed:
            g[s["mu_p"]] = gp["mu_p"]
            g[s["mu_t"]] = gp["mu_t"]
        g[s["cpc_p"]] = lkj.corr_cholesky_vjp(theta[s["cpc_p"]], params.prod_corr_chol, gp["L_p"])
        g[s["cpc_t"]] = lkj.corr_cholesky_vjp(theta[s["cpc_t"]], params.temp_corr_chol, gp["L_t"])
        # x = exp(u): dx/du = x, plus 1 from the log-Jacobian
        g[s["log_s_p"]] = gp["s_p"] * params.prod_stds + 1.0
        g[s["log_s_t"]] = gp["s_t"] * params.temp_stds + 1.0
        g[s["log_w_s"]] = tot("w_s") * params.w_s + 1.0
        g[s["log_mu_s"]] = gp["mu_s"] * params.mu_s + 1.0
        g[s["log_sigma_s"]] = gp["sigma_s"] * params.sigma_s + 1.0
        g[s["b"]] = tot("b")
        g[s["log_sigma_q"]] = tot("sigma_q") * params.sigma_q + 1.0
        return g


def log_posterior_unconstrained(theta, X, y, hyper: Hyperparams) -> float:
    design = X if isinstance(X, Design) else Design(X, y, hyper.n_regions, hyper.n_products)
    return Posterior(design, hyper).logp(theta)


def grad_log_posterior(theta, X, y, hyper: Hyperparams) -> np.ndarray:
    design = X if isinstance(X, Design) else Design(X, y, hyper.n_regions, hyper.n_products)
    return Posterior(design, hyper).grad(theta)


# ---------------------------------------------------------------------------
# forward simulation


def sample_prior(hyper: Hyperparams, rng: np.random.Generator) -> ModelParams:
    """Ancestral draw from the prior."""
    n, k = hyper.n_regions, hyper.n_products
    w_r = hyper.mu_r + np.sqrt(hyper.gamma_r) * rng.standard_normal(n)

    def block(dim, delta, Gamma, scale):
        mu = rng.multivariate_normal(delta, Gamma, method="cholesky")
        L = lkj.sample_lkj_cholesky(dim, hyper.lkj_eta, rng)
        stds = scale * np.abs(rng.standard_cauchy(dim))
        w = mu + stds * (L @ rng.standard_normal(dim))
        return w, mu, L, stds

    w_p, mu_p, Lp, s_p = block(k, hyper.delta_p, hyper.Gamma_p, hyper.sigma_p)
    w_t, mu_t, Lt, s_t = block(N_DAYS, hyper.delta_t, hyper.Gamma_t, hyper.sigma_t)
    mu_s = hyper.phi_s * abs(rng.standard_cauchy())
    sigma_s = hyper.psi_s * abs(rng.standard_cauchy())
    w_s = float(sample_trunc_normal(mu_s, sigma_s, rng))
    b = hyper.b_scale * rng.standard_normal()
    sigma_q = 1.0 / rng.gamma(hyper.alpha_q, 1.0 / hyper.beta_q)
    w_r_cell = None
    if hyper.hierarchical:
        w_r_cell = w_r[:, None] + np.sqrt(hyper.gamma_r) * rng.standard_normal((n, k))
    return ModelParams(w_r=w_r, w_p=w_p, mu_p=mu_p, prod_corr_chol=Lp, prod_stds=s_p,
                       w_t=w_t, mu_t=mu_t, temp_corr_chol=Lt, temp_stds=s_t,
                       w_s=w_s, mu_s=float(mu_s), sigma_s=float(sigma_s), b=float(b),
                       sigma_q=float(sigma_q), w_r_cell=w_r_cell)


def feature_location(params: ModelParams, feature) -> float:
    """``x'w + b`` for one feature vector (array or :class:`FeatureVector`)."""
    x = np.asarray(feature.as_array() if hasattr(feature, "as_array") else feature, dtype=float)
    w = params.weights
    mu = float(x @ w + params.b)
    if params.w_r_cell is not None:
        n = params.n_regions
        i = int(np.argmax(x[N_DAYS:N_DAYS + n]))
        j = int(np.argmax(x[N_DAYS + n:N_DAYS + n + params.n_products]))
        mu += params.w_r_cell[i, j] - params.w_r[i]
    return mu


def predictive_quantity(params: ModelParams, feature, rng: np.random.Generator) -> float:
    return float(sample_trunc_normal(feature_location(params, feature), params.sigma_q, rng))


def with_params(params: ModelParams, **changes) -> ModelParams:
    return replace(params, **changes)
