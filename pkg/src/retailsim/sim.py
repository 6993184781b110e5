"""Store MDP whose daily sales are drawn from the fitted demand model."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .core import (Action, BoardConfig, DoNothing, EnvState, InvalidEnvironment, Place,
                   RetailEnvironmentSpec, advance_day, apply_action, check_board,
                   is_feasible, reward)
from .features import SalesScaler
from .model import ModelParams
from .truncnorm import sample_trunc_normal_from_uniform, trunc_normal_mean

POSTERIOR_DRAW = "draw"
POSTERIOR_MEAN = "mean"
FIXED_TRUTH = "fixed"


@dataclass
class DemandDraws:
    """Stack of ``S`` parameter sets reduced to what the simulator needs."""

    w_t: np.ndarray        # (S, 7)
    region: np.ndarray     # (S, n, k) region contribution per cell
    w_p: np.ndarray        # (S, k)
    w_s: np.ndarray        # (S,)
    b: np.ndarray          # (S,)
    sigma_q: np.ndarray    # (S,)

    @classmethod
    def from_params(cls, params: Sequence[ModelParams] | ModelParams) -> "DemandDraws":
        if isinstance(params, ModelParams):
            params = [params]
        return cls(
            w_t=np.stack([p.w_t for p in params]),
            region=np.stack([p.region_cell_weights() for p in params]),
            w_p=np.stack([p.w_p for p in params]),
            w_s=np.array([p.w_s for p in params], dtype=float),
            b=np.array([p.b for p in params], dtype=float),
            sigma_q=np.array([p.sigma_q for p in params], dtype=float),
        )

    def __len__(self):
        return self.b.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.region.shape[1:]

    def mean(self) -> "DemandDraws":
        return DemandDraws(*(a.mean(axis=0, keepdims=True) for a in
                             (self.w_t, self.region, self.w_p, self.w_s, self.b, self.sigma_q)))

    def location(self, s: int, day: int, x_s: np.ndarray) -> np.ndarray:
        """``n x k`` truncated-normal locations for draw ``s``; ``x_s`` per product."""
        return (self.w_t[s, day] + self.region[s] + self.w_p[s][None, :]
                + self.w_s[s] * x_s[None, :] + self.b[s])


@dataclass
class SimulatorConfig:
    horizon_days: int = 90
    placement_cost: float | None = None   # None: use the environment's value
    revenue_scale: float = 100.0
    param_mode: str = POSTERIOR_DRAW

    def __post_init__(self):
        if self.horizon_days < 1:
            raise ValueError("horizon_days must be >= 1")
        if not self.revenue_scale > 0:
            raise ValueError("revenue_scale must be positive")
        if self.param_mode not in (POSTERIOR_DRAW, POSTERIOR_MEAN, FIXED_TRUTH):
            raise ValueError(f"unknown param_mode {self.param_mode!r}")


@dataclass(frozen=True)
class Transition:
    state: EnvState
    action: Action
    reward: float
    next_state: EnvState
    done: bool
    quantities: np.ndarray = field(repr=False, compare=False, default=None)


class RolloutError(RuntimeError):
    pass


class Simulator:
    """One episode at a time; not safe for concurrent stepping.

    Noise is indexed by ``(seed, epoch_day)``: two episodes with the same
    seed see the same uniforms and posterior-draw choices on each day
    whatever actions are taken, which makes policy comparisons paired.
    """

    def __init__(self, env: RetailEnvironmentSpec, demand: DemandDraws | ModelParams,
                 scaler: SalesScaler, config: SimulatorConfig | None = None, seed: int = 0):
        self.config = config or SimulatorConfig()
        if self.config.placement_cost is not None:
            env = replace(env, placement_cost=float(self.config.placement_cost))
        self.env = env
        if isinstance(demand, ModelParams) or (isinstance(demand, list) and demand
                                               and isinstance(demand[0], ModelParams)):
            demand = DemandDraws.from_params(demand)
        if demand is None or len(demand) == 0:
            raise ValueError("simulator needs at least one parameter set")
        if demand.shape != env.shape:
            raise InvalidEnvironment(f"demand model is {demand.shape}, environment {env.shape}")
        if self.config.param_mode == POSTERIOR_MEAN:
            demand = demand.mean()
        elif self.config.param_mode == FIXED_TRUTH and len(demand) != 1:
            raise ValueError("fixed mode needs exactly one parameter set")
        self.demand = demand
        self.scaler = scaler
        self.cost = env.placement_cost
        self.seed = int(seed)
        self._mean = demand.mean() if len(demand) > 1 else demand

    # -- helpers ---------------------------------------------------------

    def _x_s(self, prev_revenue: np.ndarray) -> np.ndarray:
        return self.scaler.scale(prev_revenue.sum(axis=0))

    def _day_rng(self, epoch_day: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=(epoch_day,)))

    def expected_cell_revenue(self, state: EnvState) -> np.ndarray:
        """Posterior-mean expected revenue of every cell if displayed today."""
        mu = self._mean.location(0, state.day_of_week, self._x_s(state.prev_revenue))
        q = trunc_normal_mean(mu, self._mean.sigma_q[0])
        return q * self.env.prices[None, :]

    def expected_reward(self, state: EnvState, board: BoardConfig) -> float:
        e = self.expected_cell_revenue(state)
        return float((e * board.grid).sum() - self.cost * board.occupied_regions().sum())

    # -- MDP interface ---------------------------------------------------

    def reset(self, init_board: BoardConfig, day0: int = 0) -> EnvState:
        check_board(self.env, init_board)
        return EnvState(init_board, int(day0), np.zeros(self.env.shape), 0)

    def sample_quantities(self, state: EnvState, board: BoardConfig) -> np.ndarray:
        rng = self._day_rng(state.epoch_day)
        s = int(rng.integers(len(self.demand))) if len(self.demand) > 1 else 0
        u = rng.random(self.env.shape)
        occupied = board.grid.astype(bool)
        q = np.zeros(self.env.shape)
        if occupied.any():
            mu = self.demand.location(s, state.day_of_week, self._x_s(state.prev_revenue))
            q[occupied] = sample_trunc_normal_from_uniform(
                mu[occupied], self.demand.sigma_q[s], u[occupied])
        return q

    def step(self, state: EnvState, action: Action) -> Transition:
        if state.epoch_day >= self.config.horizon_days:
            raise RolloutError("episode already finished")
        if not is_feasible(state.board, action):
            raise InvalidEnvironment(f"infeasible action {action} on day {state.epoch_day}")
        board = apply_action(state.board, action)
        q = self.sample_quantities(state, board)
        env = self.env
        r = reward(env, board, q)
        g = q * env.prices[None, :]
        nxt = EnvState(board, advance_day(state.day_of_week), g, state.epoch_day + 1)
        done = nxt.epoch_day >= self.config.horizon_days
        return Transition(state, action, float(r), nxt, done, q)


Policy = Callable[[EnvState], Action]


@dataclass
class Trajectory:
    transitions: list[Transition]

    @property
    def rewards(self) -> np.ndarray:
        return np.array([t.reward for t in self.transitions])

    @property
    def total_reward(self) -> float:
        return float(sum(t.reward for t in self.transitions))

    def __len__(self):
        return len(self.transitions)

    def to_jsonl(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for t in self.transitions:
                fh.write(json.dumps(transition_record(t)) + "\n")


def board_digest(board: BoardConfig) -> str:
    return hashlib.sha1(board.grid.tobytes() + repr(board.shape).encode()).hexdigest()[:16]


def action_record(action: Action) -> dict:
    if isinstance(action, DoNothing):
        return {"type": "noop"}
    kind = "place" if isinstance(action, Place) else "remove"
    return {"type": kind, "region": int(action.region), "product": int(action.product)}


def transition_record(t: Transition) -> dict:
    return {
        "epoch_day": t.state.epoch_day,
        "day_of_week": t.state.day_of_week,
        "board": board_digest(t.state.board),
        "occupied": t.state.board.n_occupied,
        "action": action_record(t.action),
        "reward": t.reward,
        "next_board": board_digest(t.next_state.board),
        "done": t.done,
    }


def rollout(policy: Policy, sim: Simulator, state0: EnvState) -> Trajectory:
    """Run ``policy`` from ``state0`` until the horizon; rewards are undiscounted."""
    state = state0
    out = []
    while state.epoch_day < sim.config.horizon_days:
        action = policy(state)
        if not is_feasible(state.board, action):
            raise RolloutError(
                f"policy returned infeasible {action} on day {state.epoch_day} "
                f"with board\n{state.board.grid}")
        t = sim.step(state, action)
        out.append(t)
        state = t.next_state
    return Trajectory(out)


def random_board(env: RetailEnvironmentSpec, n_occupied: int, rng: np.random.Generator) -> BoardConfig:
    """Board with exactly ``n_occupied`` displays at uniformly random cells."""
    if not 0 <= n_occupied <= env.n_cells:
        raise ValueError(f"cannot occupy {n_occupied} of {env.n_cells} cells")
    grid = np.zeros(env.n_cells, dtype=np.int8)
    grid[rng.choice(env.n_cells, size=n_occupied, replace=False)] = 1
    return BoardConfig(grid.reshape(env.shape))
