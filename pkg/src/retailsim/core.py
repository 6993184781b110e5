"""Domain types and deterministic mechanics of the product allocation problem.

A store is a set of ``n`` regions and a catalogue of ``k`` products. The
board configuration is an ``n x k`` binary grid; cell ``(i, j)`` is 1 when
product ``j`` is on display in region ``i``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

DAYS_PER_WEEK = 7


class InvalidEnvironment(ValueError):
    """Raised when an environment, board or action violates an invariant."""


@dataclass(frozen=True)
class RetailEnvironmentSpec:
    n_regions: int
    n_products: int
    prices: np.ndarray
    adjacency: np.ndarray | None = None
    placement_cost: float = 1.0

    def __post_init__(self):
        prices = np.asarray(self.prices, dtype=float).reshape(-1)
        object.__setattr__(self, "prices", prices)
        if self.adjacency is None:
            adj = np.zeros((self.n_regions, self.n_regions), dtype=np.int8)
        else:
            adj = np.asarray(self.adjacency)
        object.__setattr__(self, "adjacency", adj)
        prices.setflags(write=False)
        adj.setflags(write=False)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_regions, self.n_products)

    @property
    def n_cells(self) -> int:
        return self.n_regions * self.n_products

    def to_dict(self) -> dict:
        return {
            "n_regions": int(self.n_regions),
            "n_products": int(self.n_products),
            "prices": [float(p) for p in self.prices],
            "adjacency": self.adjacency.astype(int).tolist(),
            "placement_cost": float(self.placement_cost),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RetailEnvironmentSpec":
        return validate_environment(cls(
            n_regions=int(d["n_regions"]),
            n_products=int(d["n_products"]),
            prices=np.asarray(d["prices"], dtype=float),
            adjacency=np.asarray(d.get("adjacency"), dtype=np.int8)
            if d.get("adjacency") is not None else None,
            placement_cost=float(d.get("placement_cost", 1.0)),
        ))


def validate_environment(spec: RetailEnvironmentSpec) -> RetailEnvironmentSpec:
    """Return ``spec`` unchanged, or raise on the first violated invariant."""
    if int(spec.n_regions) < 1:
        raise InvalidEnvironment(f"n_regions must be >= 1, got {spec.n_regions}")
    if int(spec.n_products) < 1:
        raise InvalidEnvironment(f"n_products must be >= 1, got {spec.n_products}")
    adj = spec.adjacency
    n = spec.n_regions
    if adj.shape != (n, n):
        raise InvalidEnvironment(f"adjacency must be {n}x{n}, got {adj.shape}")
    if not np.isin(adj, (0, 1)).all():
        raise InvalidEnvironment("adjacency entries must be 0 or 1")
    if np.any(np.diag(adj) != 0):
        raise InvalidEnvironment("adjacency must have a zero diagonal")
    if not np.array_equal(adj, adj.T):
        raise InvalidEnvironment("adjacency must be symmetric")
    if spec.prices.shape != (spec.n_products,):
        raise InvalidEnvironment(
            f"expected {spec.n_products} prices, got {spec.prices.shape[0]}")
    if not np.all(np.isfinite(spec.prices)) or np.any(spec.prices <= 0):
        raise InvalidEnvironment("all prices must be strictly positive")
    if not np.isfinite(spec.placement_cost) or spec.placement_cost < 0:
        raise InvalidEnvironment("placement_cost must be non-negative")
    return spec


# ---------------------------------------------------------------------------
# actions


@dataclass(frozen=True)
class DoNothing:
    def index(self, n_products: int, n_cells: int) -> int:
        return 0


@dataclass(frozen=True)
class Place:
    region: int
    product: int

    def index(self, n_products: int, n_cells: int) -> int:
        return 1 + self.region * n_products + self.product


@dataclass(frozen=True)
class Remove:
    region: int
    product: int

    def index(self, n_products: int, n_cells: int) -> int:
        return 1 + n_cells + self.region * n_products + self.product


Action = Union[DoNothing, Place, Remove]


def action_index(action: Action, n_regions: int, n_products: int) -> int:
    """Position of ``action`` in the fixed ordering used by every policy.

    0 is DoNothing, ``1 .. nk`` are Place(i, j) in row-major order and
    ``nk+1 .. 2nk`` are Remove(i, j).
    """
    return action.index(n_products, n_regions * n_products)


def action_from_index(idx: int, n_regions: int, n_products: int) -> Action:
    nk = n_regions * n_products
    if idx == 0:
        return DoNothing()
    if 1 <= idx <= nk:
        i, j = divmod(idx - 1, n_products)
        return Place(i, j)
    if nk < idx <= 2 * nk:
        i, j = divmod(idx - 1 - nk, n_products)
        return Remove(i, j)
    raise IndexError(f"action index {idx} out of range for {n_regions}x{n_products}")


# ---------------------------------------------------------------------------
# board / state


@dataclass(frozen=True)
class BoardConfig:
    grid: np.ndarray

    def __post_init__(self):
        g = np.array(self.grid, dtype=np.int8, copy=True)
        if g.ndim != 2:
            raise InvalidEnvironment("board grid must be two-dimensional")
        if not np.isin(g, (0, 1)).all():
            raise InvalidEnvironment("board entries must be 0 or 1")
        g.setflags(write=False)
        object.__setattr__(self, "grid", g)

    @classmethod
    def empty(cls, n_regions: int, n_products: int) -> "BoardConfig":
        return cls(np.zeros((n_regions, n_products), dtype=np.int8))

    @property
    def shape(self) -> tuple[int, int]:
        return self.grid.shape

    @property
    def n_occupied(self) -> int:
        return int(self.grid.sum())

    def occupied_regions(self) -> np.ndarray:
        return self.grid.any(axis=1)

    def __eq__(self, other):
        return isinstance(other, BoardConfig) and np.array_equal(self.grid, other.grid)

    def __hash__(self):
        return hash((self.grid.shape, self.grid.tobytes()))


@dataclass(frozen=True)
class EnvState:
    board: BoardConfig
    day_of_week: int
    prev_revenue: np.ndarray
    epoch_day: int = 0

    def __post_init__(self):
        if not 0 <= int(self.day_of_week) < DAYS_PER_WEEK:
            raise InvalidEnvironment(f"day_of_week must be in [0, 6], got {self.day_of_week}")
        g = np.array(self.prev_revenue, dtype=float, copy=True)
        if g.shape != self.board.shape:
            raise InvalidEnvironment(
                f"prev_revenue shape {g.shape} does not match board {self.board.shape}")
        if np.any(g < 0) or not np.all(np.isfinite(g)):
            raise InvalidEnvironment("prev_revenue must be finite and non-negative")
        g.setflags(write=False)
        object.__setattr__(self, "prev_revenue", g)
        if self.epoch_day < 0:
            raise InvalidEnvironment("epoch_day must be non-negative")


def check_board(spec: RetailEnvironmentSpec, board: BoardConfig) -> None:
    if board.shape != spec.shape:
        raise InvalidEnvironment(f"board shape {board.shape} does not match environment {spec.shape}")


def feasible_mask(board: BoardConfig) -> np.ndarray:
    """Boolean mask over the ``2nk + 1`` action indices."""
    flat = board.grid.reshape(-1).astype(bool)
    return np.concatenate(([True], ~flat, flat))


def feasible_actions(state: EnvState | BoardConfig) -> list[Action]:
    """DoNothing, then Place for every empty cell, then Remove for every occupied one."""
    board = state.board if isinstance(state, EnvState) else state
    n, k = board.shape
    grid = board.grid
    places = [Place(i, j) for i in range(n) for j in range(k) if grid[i, j] == 0]
    removes = [Remove(i, j) for i in range(n) for j in range(k) if grid[i, j] == 1]
    return [DoNothing(), *places, *removes]


def is_feasible(board: BoardConfig, action: Action) -> bool:
    if isinstance(action, DoNothing):
        return True
    n, k = board.shape
    if not (0 <= action.region < n and 0 <= action.product < k):
        return False
    cell = board.grid[action.region, action.product]
    return cell == 0 if isinstance(action, Place) else cell == 1


def apply_action(board: BoardConfig, action: Action) -> BoardConfig:
    if isinstance(action, DoNothing):
        return board
    if not isinstance(action, (Place, Remove)):
        raise TypeError(f"not an action: {action!r}")
    if not is_feasible(board, action):
        raise InvalidEnvironment(f"infeasible action {action} for board\n{board.grid}")
    grid = board.grid.copy()
    grid[action.region, action.product] = 1 if isinstance(action, Place) else 0
    return BoardConfig(grid)


# ---------------------------------------------------------------------------
# revenue and reward


def revenue_by_region(prices, quantities) -> np.ndarray:
    p = np.asarray(prices, dtype=float)
    q = np.asarray(quantities, dtype=float)
    if q.ndim != 2 or q.shape[1] != p.shape[0]:
        raise ValueError(f"quantities {q.shape} incompatible with {p.shape[0]} prices")
    return q @ p


def total_revenue(prices, quantities) -> float:
    return float(revenue_by_region(prices, quantities).sum())


def reward(spec: RetailEnvironmentSpec, board: BoardConfig, quantities) -> float:
    """Daily revenue minus ``c`` for every region holding at least one display."""
    q = np.asarray(quantities, dtype=float)
    if q.shape != spec.shape or board.shape != spec.shape:
        raise ValueError(
            f"dimension mismatch: env {spec.shape}, board {board.shape}, quantities {q.shape}")
    n_open = int(board.occupied_regions().sum())
    return total_revenue(spec.prices, q) - spec.placement_cost * n_open


def advance_day(day: int) -> int:
    if not 0 <= day < DAYS_PER_WEEK:
        raise ValueError(f"day must be in [0, 6], got {day}")
    return (day + 1) % DAYS_PER_WEEK
