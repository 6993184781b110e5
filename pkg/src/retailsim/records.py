"""On-disk record types and the in-memory columnar dataset."""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SalesRecord:
    date: dt.date
    region_id: int
    product_id: int
    quantity: float
    price: float


@dataclass(frozen=True)
class PlacementRecord:
    date: dt.date
    region_id: int
    product_id: int


class SalesDataset:
    """Date-sorted sales observations held column-wise.

    ``day`` counts days since 1970-01-01 so that lags are integer arithmetic.
    """

    def __init__(self, day, region, product, quantity, price, placements=None):
        self.day = np.asarray(day, dtype=np.int64)
        self.region = np.asarray(region, dtype=np.int64)
        self.product = np.asarray(product, dtype=np.int64)
        self.quantity = np.asarray(quantity, dtype=float)
        self.price = np.asarray(price, dtype=float)
        n = self.day.shape[0]
        for name in ("region", "product", "quantity", "price"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"column {name} has the wrong length")
        # (day, region, product) triples, same integer encoding
        self.placements = (np.zeros((0, 3), dtype=np.int64) if placements is None
                           else np.asarray(placements, dtype=np.int64).reshape(-1, 3))

    @classmethod
    def from_records(cls, records, placements=None) -> "SalesDataset":
        records = list(records)
        pl = None
        if placements is not None:
            pl = [(to_day(p.date), p.region_id, p.product_id) for p in placements]
        return cls([to_day(r.date) for r in records], [r.region_id for r in records],
                   [r.product_id for r in records], [r.quantity for r in records],
                   [r.price for r in records], pl)

    def __len__(self):
        return self.day.shape[0]

    def records(self) -> list[SalesRecord]:
        return [SalesRecord(from_day(d), int(i), int(j), float(q), float(p))
                for d, i, j, q, p in zip(self.day, self.region, self.product,
                                         self.quantity, self.price)]

    def is_sorted(self) -> bool:
        return bool(np.all(np.diff(self.day) >= 0))

    def sorted(self) -> "SalesDataset":
        order = np.lexsort((self.product, self.region, self.day))
        return self.take(order)

    def take(self, rows) -> "SalesDataset":
        rows = np.asarray(rows)
        days = set(np.unique(self.day[rows]).tolist())
        pl = self.placements[np.isin(self.placements[:, 0], list(days))] if len(self.placements) else None
        return SalesDataset(self.day[rows], self.region[rows], self.product[rows],
                            self.quantity[rows], self.price[rows], pl)

    @property
    def dates(self) -> np.ndarray:
        return self.day.astype("datetime64[D]")

    def revenue(self) -> np.ndarray:
        return self.quantity * self.price

    def daily_totals(self) -> tuple[np.ndarray, np.ndarray]:
        days, inv = np.unique(self.day, return_inverse=True)
        return days, np.bincount(inv, weights=self.revenue())


_EPOCH = dt.date(1970, 1, 1)


def to_day(date) -> int:
    if isinstance(date, (int, np.integer)):
        return int(date)
    if isinstance(date, str):
        date = dt.date.fromisoformat(date)
    return (date - _EPOCH).days


def from_day(day: int) -> dt.date:
    return _EPOCH + dt.timedelta(days=int(day))


def day_of_week(day) -> np.ndarray:
    """Sunday = 0 ... Saturday = 6 for integer day counts (1970-01-01 was a Thursday)."""
    return (np.asarray(day, dtype=np.int64) + 4) % 7
