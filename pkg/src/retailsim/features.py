"""Feature vectors ``[x_t | x_r | x_p | x_s]`` and design matrices."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import RetailEnvironmentSpec
from .model import N_DAYS, Design
from .records import SalesDataset, day_of_week

STD_FLOOR = 1e-8


@dataclass(frozen=True)
class SalesScaler:
    mean: float
    std: float

    def __post_init__(self):
        if not self.std > 0:
            raise ValueError("scaler std must be positive")

    def scale(self, v):
        return (np.asarray(v, dtype=float) - self.mean) / self.std

    def unscale(self, z):
        return np.asarray(z, dtype=float) * self.std + self.mean

    def to_dict(self):
        return {"mean": float(self.mean), "std": float(self.std)}


def fit_scaler(values) -> SalesScaler:
    """Population mean and standard deviation, the latter floored at 1e-8."""
    v = np.asarray(values, dtype=float).reshape(-1)
    if v.size == 0:
        raise ValueError("cannot fit a scaler on no data")
    return SalesScaler(float(v.mean()), max(float(v.std()), STD_FLOOR))


@dataclass(frozen=True)
class FeatureVector:
    day_onehot: np.ndarray
    region_onehot: np.ndarray
    product_onehot: np.ndarray
    prev_sales: float

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.day_onehot, self.region_onehot,
                               self.product_onehot, [self.prev_sales]])

    def __len__(self):
        return self.day_onehot.size + self.region_onehot.size + self.product_onehot.size + 1


def feature_dim(n: int, k: int) -> int:
    return N_DAYS + n + k + 1


def extract_features(day: int, region: int, product: int, prev_product_revenue: float,
                     scaler: SalesScaler, n: int, k: int) -> FeatureVector:
    if not 0 <= day < N_DAYS:
        raise IndexError(f"day {day} out of range")
    if not 0 <= region < n:
        raise IndexError(f"region {region} out of range for {n} regions")
    if not 0 <= product < k:
        raise IndexError(f"product {product} out of range for {k} products")
    x_s = float(scaler.scale(prev_product_revenue))
    if not np.isfinite(x_s):
        raise ValueError("previous revenue feature is not finite")
    return FeatureVector(np.eye(N_DAYS)[day], np.eye(n)[region], np.eye(k)[product], x_s)


def feature_matrix(day, region, product, x_s, n: int, k: int) -> np.ndarray:
    """Vectorised :func:`extract_features` with an already standardised ``x_s``."""
    day = np.asarray(day)
    rows = np.arange(day.shape[0])
    X = np.zeros((day.shape[0], feature_dim(n, k)))
    X[rows, day] = 1.0
    X[rows, N_DAYS + np.asarray(region)] = 1.0
    X[rows, N_DAYS + n + np.asarray(product)] = 1.0
    X[:, -1] = x_s
    return X


@dataclass
class DesignMatrix:
    X: np.ndarray
    y: np.ndarray
    day: np.ndarray        # absolute day number of each row
    region: np.ndarray
    product: np.ndarray
    price: np.ndarray
    prev_revenue: np.ndarray   # unscaled lag feature
    n_regions: int
    n_products: int

    def __len__(self):
        return self.y.shape[0]

    @property
    def row_index(self) -> np.ndarray:
        return np.stack([self.day, self.region, self.product], axis=1)

    def design(self) -> Design:
        return Design(self.X, self.y, self.n_regions, self.n_products)

    def take(self, rows) -> "DesignMatrix":
        return DesignMatrix(self.X[rows], self.y[rows], self.day[rows], self.region[rows],
                            self.product[rows], self.price[rows], self.prev_revenue[rows],
                            self.n_regions, self.n_products)


def lagged_product_revenue(dataset: SalesDataset) -> tuple[np.ndarray, np.ndarray]:
    """Previous-day product revenue summed over regions for every row.

    Returns ``(values, available)``; a row has no lag when the preceding
    calendar day is absent from the dataset.
    """
    days = np.unique(dataset.day)
    k = int(dataset.product.max()) + 1 if len(dataset) else 0
    day_pos = np.searchsorted(days, dataset.day)
    by_day = np.zeros((days.size, k))
    np.add.at(by_day, (day_pos, dataset.product), dataset.quantity * dataset.price)
    prev = dataset.day - 1
    pos = np.searchsorted(days, prev)
    pos_c = np.minimum(pos, max(days.size - 1, 0))
    available = (pos < days.size) & (days[pos_c] == prev)
    values = np.where(available, by_day[pos_c, dataset.product], 0.0)
    return values, available


def build_design_matrix(dataset: SalesDataset, env: RetailEnvironmentSpec,
                        scaler: SalesScaler | None = None) -> tuple[DesignMatrix, SalesScaler]:
    """Rows for every observation whose previous day is observed.

    When ``scaler`` is None it is fitted on the lag values of the returned rows.
    """
    if not dataset.is_sorted():
        raise ValueError("dataset must be sorted by date")
    if np.any(dataset.quantity < 0):
        bad = int(np.flatnonzero(dataset.quantity < 0)[0])
        raise ValueError(f"negative quantity at row {bad}")
    n, k = env.n_regions, env.n_products
    if len(dataset) and (dataset.region.max() >= n or dataset.product.max() >= k):
        raise ValueError("dataset references regions/products outside the environment")
    lag, ok = lagged_product_revenue(dataset)
    rows = np.flatnonzero(ok)
    if scaler is None:
        scaler = fit_scaler(lag[rows])
    X = feature_matrix(day_of_week(dataset.day[rows]), dataset.region[rows],
                       dataset.product[rows], scaler.scale(lag[rows]), n, k)
    dm = DesignMatrix(X, dataset.quantity[rows].copy(), dataset.day[rows].copy(),
                      dataset.region[rows].copy(), dataset.product[rows].copy(),
                      dataset.price[rows].copy(), lag[rows], n, k)
    return dm, scaler
