"""Forecast comparison against baselines and paired policy evaluation."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .baselines import MlpConfig, mlp_fit, mlp_predict, ols_fit, ols_predict, rf_fit, rf_predict
from .core import BoardConfig, RetailEnvironmentSpec
from .features import DesignMatrix, SalesScaler
from .metrics import directional_accuracy, mae, mse
from .policies import DqnConfig, DqnPolicy, QNetwork, TabuPolicy, naive_policy, random_policy
from .sim import DemandDraws, Simulator, SimulatorConfig, random_board, rollout

MODEL_ORDER = ("OLS", "RF", "MLP", "PSD")


# -- forecasts -----------------------------------------------------------------

@dataclass
class MetricReport:
    model: str
    mse: float
    mae: float
    directional_accuracy: float


def daily_totals(day: np.ndarray, values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    days, idx = np.unique(day, return_inverse=True)
    return days, np.bincount(idx, weights=values, minlength=days.size)


def report_for(model: str, test: DesignMatrix, revenue_pred: np.ndarray) -> MetricReport:
    truth = test.y * test.price
    _, daily_true = daily_totals(test.day, truth)
    _, daily_pred = daily_totals(test.day, revenue_pred)
    da = directional_accuracy(daily_true, daily_pred) if daily_true.size >= 2 else float("nan")
    return MetricReport(model, mse(truth, revenue_pred), mae(truth, revenue_pred), da)


def baseline_predictions(train: DesignMatrix, test: DesignMatrix, seed: int = 0,
                         mlp_config: MlpConfig | None = None,
                         rf_trees: int = 100) -> dict[str, np.ndarray]:
    """Revenue predictions of the three baselines; all use the same features."""
    w = ols_fit(train.X, train.y)
    forest = rf_fit(train.X, train.y, trees=rf_trees, seed=seed)
    mlp = mlp_fit(train.X, train.y, mlp_config or MlpConfig(seed=seed))
    return {
        "OLS": ols_predict(w, test.X) * test.price,
        "RF": rf_predict(forest, test.X) * test.price,
        "MLP": np.maximum(mlp_predict(mlp, test.X), 0.0) * test.price,
    }


def evaluate_models(train: DesignMatrix, test: DesignMatrix,
                    psd_revenue: np.ndarray | None = None, seed: int = 0,
                    mlp_config: MlpConfig | None = None,
                    rf_trees: int = 100) -> list[MetricReport]:
    """One report per model on the test rows; ``psd_revenue`` holds the
    posterior-predictive mean revenue of each test row (row omitted if None)."""
    preds = baseline_predictions(train, test, seed, mlp_config, rf_trees)
    if psd_revenue is not None:
        psd_revenue = np.asarray(psd_revenue, dtype=float)
        if psd_revenue.shape != (len(test),):
            raise ValueError("psd_revenue must hold one value per test row")
        preds["PSD"] = psd_revenue
    return [report_for(m, test, preds[m]) for m in MODEL_ORDER if m in preds]


def write_model_reports(path, reports: list[MetricReport]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "mse", "mae", "directional_accuracy"])
        for r in reports:
            w.writerow([r.model, repr(r.mse), repr(r.mae), repr(r.directional_accuracy)])


# -- policies --------------------------------------------------------------------

# A policy maker builds a fresh policy for one episode from its simulator
# and an integer seed.
PolicyMaker = Callable[[Simulator, int], Callable]


def make_random(sim: Simulator, seed: int):
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0x72,)))
    return lambda state: random_policy(state, rng)


def make_naive(sim: Simulator, seed: int):
    return naive_policy


def make_tabu(sim: Simulator, seed: int, capacity: int = 50):
    return TabuPolicy(sim, capacity)


def make_dqn(net: QNetwork, cfg: DqnConfig | None = None) -> PolicyMaker:
    return lambda sim, seed: DqnPolicy(net, cfg)


def standard_policies(net: QNetwork | None = None,
                      cfg: DqnConfig | None = None) -> dict[str, PolicyMaker]:
    out = {"random": make_random, "naive": make_naive, "tabu": make_tabu}
    if net is not None:
        out["dqn"] = make_dqn(net, cfg)
    return out


def initial_board(env: RetailEnvironmentSpec, rng: np.random.Generator,
                  fill: float = 0.5) -> BoardConfig:
    """Random board with ``round(fill * n * k)`` displays (empty when fill is 0)."""
    return random_board(env, int(round(fill * env.n_cells)), rng)


@dataclass
class PolicyEvalTable:
    rows: list = field(default_factory=list)    # (policy, length, seed, cumulative_reward)

    def add(self, policy: str, length: int, seed: int, total: float) -> None:
        self.rows.append((policy, int(length), int(seed), float(total)))

    def values(self, policy: str, length: int) -> np.ndarray:
        return np.array([r[3] for r in self.rows if r[0] == policy and r[1] == length])

    def medians(self) -> dict[tuple[str, int], float]:
        keys = dict.fromkeys((r[0], r[1]) for r in self.rows)
        return {key: float(np.median(self.values(*key))) for key in keys}

    def median(self, policy: str, length: int) -> float:
        return float(np.median(self.values(policy, length)))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["policy", "length", "seed", "cumulative_reward"])
            for p, n, s, v in self.rows:
                w.writerow([p, n, s, repr(v)])

    def write_summary_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["policy", "length", "median_cumulative_reward"])
            for (p, n), v in self.medians().items():
                w.writerow([p, n, repr(v)])


def episode_seed(base_seed: int, length: int, seed: int) -> int:
    ss = np.random.SeedSequence(base_seed, spawn_key=(int(length), int(seed)))
    return int(ss.generate_state(1)[0])


def evaluate_policies(env: RetailEnvironmentSpec, demand, scaler: SalesScaler,
                      policies: dict[str, PolicyMaker], lengths=(30, 60, 90),
                      seeds=range(5), fill: float = 0.5,
                      sim_config: SimulatorConfig | None = None,
                      base_seed: int = 0) -> PolicyEvalTable:
    """Roll out every policy once per ``(length, seed)`` cell.

    Within a cell all policies start from the same random board and weekday
    and see the same demand noise (the simulator seed is shared), so the
    comparison is paired.
    """
    base = sim_config or SimulatorConfig()
    if not isinstance(demand, DemandDraws):
        demand = DemandDraws.from_params(demand)
    table = PolicyEvalTable()
    for length in lengths:
        cfg = SimulatorConfig(horizon_days=int(length), placement_cost=base.placement_cost,
                              revenue_scale=base.revenue_scale, param_mode=base.param_mode)
        for seed in seeds:
            cell = episode_seed(base_seed, length, seed)
            rng = np.random.default_rng(cell)
            board = initial_board(env, rng, fill)
            day0 = int(rng.integers(7))
            for name, make in policies.items():
                sim = Simulator(env, demand, scaler, cfg, seed=cell)
                state0 = sim.reset(board, day0)
                table.add(name, length, seed, rollout(make(sim, cell), sim, state0).total_reward)
    return table


def episode_factory(env: RetailEnvironmentSpec, demand, scaler: SalesScaler,
                    sim_config: SimulatorConfig | None = None, seed: int = 0,
                    fill: float = 0.5):
    """``factory(episode) -> (simulator, state)`` with a fresh random board,
    weekday and noise stream per episode, for DQN training."""
    cfg = sim_config or SimulatorConfig()
    if not isinstance(demand, DemandDraws):
        demand = DemandDraws.from_params(demand)

    def factory(episode: int):
        ss = np.random.SeedSequence(seed, spawn_key=(0x7472, int(episode)))
        rng = np.random.default_rng(ss)
        sim = Simulator(env, demand, scaler, cfg, seed=int(ss.generate_state(1)[0]))
        return sim, sim.reset(initial_board(env, rng, fill), int(rng.integers(7)))
    return factory
