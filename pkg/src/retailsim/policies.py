"""Allocation policies: random, naive, tabu search and deep Q-learning."""

from __future__ import annotations

import csv
import hashlib
import json
from collections import deque
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .blobfile import read_blob, write_blob
from .core import (Action, DoNothing, EnvState, action_from_index, apply_action,
                   feasible_actions, feasible_mask)
from .nn import MLP, SGD, Adam

QNET_MAGIC = b"RSQNET\x00\x01"


# -- baselines ---------------------------------------------------------------

def random_policy(state: EnvState, rng: np.random.Generator) -> Action:
    acts = feasible_actions(state)
    return acts[int(rng.integers(len(acts)))]


def naive_policy(state: EnvState) -> Action:
    return DoNothing()


# -- tabu search ---------------------------------------------------------------

class TabuState:
    """FIFO memory of the most recent actions."""

    def __init__(self, capacity: int = 50):
        if capacity < 0:
            raise ValueError("capacity must be >= 0")
        self.capacity = capacity
        self.tabu_list: deque = deque(maxlen=capacity)

    def __contains__(self, action: Action) -> bool:
        return action in self.tabu_list

    def __len__(self):
        return len(self.tabu_list)

    def push(self, action: Action) -> None:
        if self.capacity:
            self.tabu_list.append(action)


def tabu_policy(state: EnvState, tabu: TabuState,
                evaluator: Callable[[EnvState, Action], float]) -> Action:
    """Best admissible feasible action by ``evaluator``; ties go to the first
    action in index order. DoNothing is admissible even when tabu."""
    best, best_val = None, -np.inf
    for a in feasible_actions(state):
        if a in tabu and not isinstance(a, DoNothing):
            continue
        val = evaluator(state, a)
        if best is None or val > best_val:
            best, best_val = a, val
    tabu.push(best)
    return best


def expected_reward_evaluator(sim) -> Callable[[EnvState, Action], float]:
    """Expected one-step reward of an action under posterior-mean parameters."""
    def evaluate(state: EnvState, action: Action) -> float:
        return sim.expected_reward(state, apply_action(state.board, action))
    return evaluate


class TabuPolicy:
    """Stateful wrapper: one tabu list per episode."""

    def __init__(self, sim, capacity: int = 50):
        self.evaluator = expected_reward_evaluator(sim)
        self.capacity = capacity
        self.tabu = TabuState(capacity)

    def reset(self) -> None:
        self.tabu = TabuState(self.capacity)

    def __call__(self, state: EnvState) -> Action:
        return tabu_policy(state, self.tabu, self.evaluator)


# -- DQN -------------------------------------------------------------------------

@dataclass
class DqnConfig:
    discount: float = 0.2
    learning_starts: int = 1500
    batch_size: int = 32
    learning_rate: float = 5e-4
    training_iterations: int = 50_000
    epsilon_start: float = 0.99
    epsilon_end: float = 0.05
    epsilon_anneal_fraction: float = 0.35
    target_sync_interval: int = 500
    buffer_capacity: int = 50_000
    hidden: tuple = (128, 64)
    revenue_scale: float = 100.0
    reward_scale: float = 100.0   # rewards are divided by this inside TD targets
    optimizer: str = "adam"       # "adam" or "sgd"
    log_interval: int = 1000

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if not 0.0 <= self.discount <= 1.0:
            raise ValueError("discount must lie in [0, 1]")
        if not 0.0 < self.epsilon_anneal_fraction <= 1.0:
            raise ValueError("epsilon_anneal_fraction must lie in (0, 1]")
        if not (0.0 <= self.epsilon_end <= 1.0 and 0.0 <= self.epsilon_start <= 1.0):
            raise ValueError("epsilon endpoints must lie in [0, 1]")
        if self.batch_size < 1 or self.buffer_capacity < self.batch_size:
            raise ValueError("need batch_size >= 1 and buffer_capacity >= batch_size")
        if self.revenue_scale <= 0 or self.reward_scale <= 0:
            raise ValueError("scales must be positive")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def epsilon_at(iteration: int, cfg: DqnConfig) -> float:
    """Linear decay over the first ``epsilon_anneal_fraction`` of training."""
    span = cfg.epsilon_anneal_fraction * cfg.training_iterations
    frac = min(max(iteration, 0) / span, 1.0) if span > 0 else 1.0
    return (1.0 - frac) * cfg.epsilon_start + frac * cfg.epsilon_end


def encode_state(state: EnvState, cfg) -> np.ndarray:
    """``[board | previous revenue / revenue_scale | day one-hot]``."""
    day = np.zeros(7)
    day[state.day_of_week] = 1.0
    return np.concatenate([state.board.grid.ravel().astype(float),
                           np.asarray(state.prev_revenue, dtype=float).ravel() / cfg.revenue_scale,
                           day])


class QNetwork(MLP):
    """MLP from the state encoding to one value per action."""

    def __init__(self, n_regions: int, n_products: int, hidden=(128, 64),
                 rng: np.random.Generator | None = None):
        self.n_regions, self.n_products = int(n_regions), int(n_products)
        nk = self.n_regions * self.n_products
        super().__init__([2 * nk + 7, *hidden, 2 * nk + 1], rng)

    @property
    def n_actions(self) -> int:
        return self.sizes[-1]

    def copy(self) -> "QNetwork":
        other = QNetwork.__new__(QNetwork)
        other.n_regions, other.n_products = self.n_regions, self.n_products
        other.sizes = list(self.sizes)
        other.W = [w.copy() for w in self.W]
        other.b = [b.copy() for b in self.b]
        return other


def masked_argmax(q: np.ndarray, mask: np.ndarray) -> int:
    """Index of the largest feasible entry; ``np.argmax`` keeps the lowest on ties."""
    return int(np.argmax(np.where(mask, q, -np.inf)))


def dqn_act(net: QNetwork, state: EnvState, cfg=None) -> Action:
    cfg = cfg or DqnConfig()
    q = net(encode_state(state, cfg))
    idx = masked_argmax(q, feasible_mask(state.board))
    return action_from_index(idx, net.n_regions, net.n_products)


class DqnPolicy:
    def __init__(self, net: QNetwork, cfg: DqnConfig | None = None):
        self.net, self.cfg = net, cfg or DqnConfig()

    def __call__(self, state: EnvState) -> Action:
        return dqn_act(self.net, state, self.cfg)


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray
    next_masks: np.ndarray

    def __len__(self):
        return self.actions.shape[0]


class ReplayBuffer:
    """Fixed-capacity ring buffer; the oldest entry is overwritten first."""

    def __init__(self, capacity: int, obs_dim: int, n_actions: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.next_obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.dones = np.zeros(capacity, dtype=bool)
        self.next_masks = np.zeros((capacity, n_actions), dtype=bool)
        self.size = 0
        self.head = 0

    def __len__(self):
        return self.size

    def push(self, obs, action: int, reward: float, next_obs, done: bool, next_mask) -> None:
        i = self.head
        self.obs[i] = obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_obs[i] = next_obs
        self.dones[i] = done
        self.next_masks[i] = next_mask
        self.head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        if batch_size > self.size:
            raise ValueError(f"need {batch_size} transitions, buffer holds {self.size}")
        idx = rng.choice(self.size, size=batch_size, replace=False)
        return Batch(self.obs[idx], self.actions[idx], self.rewards[idx],
                     self.next_obs[idx], self.dones[idx], self.next_masks[idx])


class TrainingError(RuntimeError):
    pass


def td_targets(target_net: QNetwork, batch: Batch, cfg: DqnConfig) -> np.ndarray:
    q_next = np.where(batch.next_masks, target_net(batch.next_obs), -np.inf).max(axis=1)
    q_next = np.where(batch.dones | ~np.isfinite(q_next), 0.0, q_next)
    return batch.rewards / cfg.reward_scale + cfg.discount * q_next


def dqn_loss_grad(net: QNetwork, target_net: QNetwork, batch: Batch, cfg: DqnConfig):
    """Mean squared TD error and its gradient with respect to ``net``."""
    y = td_targets(target_net, batch, cfg)
    out, acts = net.forward_cache(batch.obs)
    rows = np.arange(len(batch))
    r = out[rows, batch.actions] - y
    loss = float(np.mean(r * r))
    g = np.zeros_like(out)
    g[rows, batch.actions] = 2.0 * r / len(batch)
    return loss, net.backward(acts, g)


def dqn_train_step(net: QNetwork, target_net: QNetwork, batch: Batch, cfg: DqnConfig,
                   optimizer=None) -> float:
    """One gradient update of ``net`` towards the TD targets of ``batch``."""
    if len(batch) < 1:
        raise ValueError("empty batch")
    with np.errstate(invalid="ignore", over="ignore"):
        loss, grads = dqn_loss_grad(net, target_net, batch, cfg)
    if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
        raise TrainingError(f"non-finite TD loss {loss}; rewards in batch "
                            f"[{batch.rewards.min()}, {batch.rewards.max()}]")
    (optimizer or SGD(cfg.learning_rate)).step(net, grads)
    return loss


@dataclass
class TrainLogEntry:
    iteration: int
    epsilon: float
    mean_reward: float
    loss: float


def _make_optimizer(cfg: DqnConfig):
    return Adam(cfg.learning_rate) if cfg.optimizer == "adam" else SGD(cfg.learning_rate)


def dqn_train(simulator_factory, cfg: DqnConfig | None = None, seed: int = 0,
              callback=None) -> tuple[QNetwork, list[TrainLogEntry]]:
    """Deep Q-learning against fresh episodes from ``simulator_factory``.

    ``simulator_factory(episode)`` returns ``(simulator, initial_state)``.
    The log holds one entry per ``log_interval`` steps with the mean reward
    and mean loss over that window (loss is NaN before learning starts).
    """
    cfg = cfg or DqnConfig()
    ss = np.random.SeedSequence(seed)
    net_seed, act_seed = ss.spawn(2)
    rng = np.random.default_rng(act_seed)
    episode = 0
    sim, state = simulator_factory(episode)
    n, k = sim.env.shape
    net = QNetwork(n, k, cfg.hidden, np.random.default_rng(net_seed))
    target = net.copy()
    opt = _make_optimizer(cfg)
    obs = encode_state(state, cfg)
    buf = ReplayBuffer(min(cfg.buffer_capacity, max(cfg.training_iterations, cfg.batch_size)),
                       obs.size, net.n_actions)
    log: list[TrainLogEntry] = []
    win_rewards, win_losses = [], []
    for it in range(cfg.training_iterations):
        eps = epsilon_at(it, cfg)
        mask = feasible_mask(state.board)
        if rng.random() < eps:
            a_idx = int(rng.choice(np.flatnonzero(mask)))
        else:
            a_idx = masked_argmax(net(obs), mask)
        t = sim.step(state, action_from_index(a_idx, n, k))
        next_obs = encode_state(t.next_state, cfg)
        buf.push(obs, a_idx, t.reward, next_obs, t.done, feasible_mask(t.next_state.board))
        win_rewards.append(t.reward)
        if it >= cfg.learning_starts and len(buf) >= cfg.batch_size:
            win_losses.append(dqn_train_step(net, target, buf.sample(cfg.batch_size, rng),
                                             cfg, opt))
        if (it + 1) % cfg.target_sync_interval == 0:
            target.load_from(net)
        if t.done:
            episode += 1
            sim, state = simulator_factory(episode)
            obs = encode_state(state, cfg)
        else:
            state, obs = t.next_state, next_obs
        if (it + 1) % cfg.log_interval == 0:
            log.append(TrainLogEntry(it + 1, eps, float(np.mean(win_rewards)),
                                     float(np.mean(win_losses)) if win_losses else float("nan")))
            win_rewards, win_losses = [], []
            if callback is not None:
                callback(log[-1])
    return net, log


# -- persistence -------------------------------------------------------------

def save_qnet(path, net: QNetwork, cfg: DqnConfig, extra: dict | None = None) -> None:
    header = {
        "format_version": 1,
        "n_regions": net.n_regions,
        "n_products": net.n_products,
        "sizes": net.sizes,
        "config": cfg.to_dict(),
        "config_hash": cfg.digest(),
        **(extra or {}),
    }
    write_blob(path, QNET_MAGIC, header, {f"p{i}": p for i, p in enumerate(net.params)})


def load_qnet(path) -> tuple[QNetwork, DqnConfig, dict]:
    meta, arrays = read_blob(path, QNET_MAGIC)
    cfg = DqnConfig(**meta["config"])
    if cfg.digest() != meta["config_hash"]:
        raise ValueError(f"{path}: config hash mismatch")
    net = QNetwork(meta["n_regions"], meta["n_products"], cfg.hidden)
    if net.sizes != meta["sizes"]:
        raise ValueError(f"{path}: layer sizes {meta['sizes']} do not match the config")
    for i, p in enumerate(net.params):
        p[...] = arrays[f"p{i}"]
    return net, cfg, meta


def write_training_log(path, log: list[TrainLogEntry]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "epsilon", "mean_reward", "loss"])
        for e in log:
            w.writerow([e.iteration, repr(e.epsilon), repr(e.mean_reward), repr(e.loss)])


__all__ = [
    "random_policy", "naive_policy", "TabuState", "tabu_policy", "TabuPolicy",
    "expected_reward_evaluator", "DqnConfig", "epsilon_at", "encode_state", "QNetwork",
    "masked_argmax", "dqn_act", "DqnPolicy", "Batch", "ReplayBuffer", "TrainingError",
    "td_targets", "dqn_loss_grad", "dqn_train_step", "TrainLogEntry", "dqn_train",
    "save_qnet", "load_qnet", "write_training_log"
]
