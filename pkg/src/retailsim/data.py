"""CSV schema, synthetic stores, loading with validation and date splits."""

from __future__ import annotations

import csv
import datetime as dt
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import BoardConfig, DoNothing, Place, Remove, RetailEnvironmentSpec
from .features import SalesScaler, fit_scaler, lagged_product_revenue
from .model import Hyperparams, ModelParams, sample_prior
from .records import SalesDataset, day_of_week, from_day, to_day
from .sim import FIXED_TRUTH, Simulator, SimulatorConfig

SALES_HEADER = ["date", "region_id", "product_id", "quantity", "price"]
PLACEMENTS_HEADER = ["date", "region_id", "product_id"]
SALES_FILE = "sales.csv"
PLACEMENTS_FILE = "placements.csv"
TRUTH_FILE = "truth.json"
DEFAULT_SPLIT_DATE = dt.date(2019, 7, 5)
DEFAULT_START_DATE = dt.date(2018, 8, 1)


class DataFormatError(ValueError):
    pass


@dataclass
class SyntheticSpec:
    n_regions: int = 6
    n_products: int = 5
    horizon_days: int = 365
    seed: int = 0
    start_date: dt.date = DEFAULT_START_DATE
    truth: ModelParams | None = None       # None: draw from the prior
    hyper: Hyperparams | None = None
    prices: np.ndarray | None = None       # None: uniform on [1, 10], rounded to cents
    board: str = "random_walk"             # "static" or "random_walk"
    change_prob: float = 0.2
    initial_fill: float = 0.5
    max_truth_attempts: int = 200
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.horizon_days < 2:
            raise ValueError("horizon_days must be >= 2")
        if self.board not in ("static", "random_walk"):
            raise ValueError(f"unknown board schedule {self.board!r}")
        if not 0 <= self.change_prob <= 1 or not 0 < self.initial_fill <= 1:
            raise ValueError("change_prob must lie in [0, 1] and initial_fill in (0, 1]")
        if isinstance(self.start_date, str):
            self.start_date = dt.date.fromisoformat(self.start_date)
        if self.hyper is None:
            self.hyper = Hyperparams(self.n_regions, self.n_products)


@dataclass
class SyntheticStore:
    dataset: SalesDataset
    env: RetailEnvironmentSpec
    truth: ModelParams
    scaler: SalesScaler        # frame in which the truth's ``w_s`` and ``b`` are expressed
    attempts: int


def _schedule_action(board: BoardConfig, rng: np.random.Generator, change_prob: float):
    """Random-walk step: with ``change_prob`` toggle a uniformly chosen cell,
    never emptying the board."""
    if rng.random() >= change_prob:
        return DoNothing()
    n, k = board.shape
    cell = int(rng.integers(n * k))
    i, j = divmod(cell, k)
    if board.grid[i, j]:
        return Remove(i, j) if board.n_occupied > 1 else DoNothing()
    return Place(i, j)


def _simulate(spec: SyntheticSpec, env, truth, scaler, board0, seed):
    """Run the schedule through the simulator; returns per-day boards and quantities."""
    sim = Simulator(env, truth, scaler, SimulatorConfig(horizon_days=spec.horizon_days,
                                                        param_mode=FIXED_TRUTH), seed=seed)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1 << 20,)))
    day0 = int(day_of_week(to_day(spec.start_date)))
    state = sim.reset(board0, day0)
    boards, qs = [], []
    for _ in range(spec.horizon_days):
        action = (_schedule_action(state.board, rng, spec.change_prob)
                  if spec.board == "random_walk" else DoNothing())
        t = sim.step(state, action)
        boards.append(t.next_state.board.grid.copy())
        qs.append(t.quantities)
        state = t.next_state
    return np.array(boards), np.array(qs)


def _to_dataset(spec: SyntheticSpec, env, boards, qs) -> SalesDataset:
    start = to_day(spec.start_date)
    t, i, j = np.nonzero(boards)
    return SalesDataset(start + t, i, j, qs[t, i, j], env.prices[j],
                        np.stack([start + t, i, j], axis=1))


def _lag_scaler(dataset: SalesDataset) -> SalesScaler | None:
    lag, ok = lagged_product_revenue(dataset)
    if not ok.any():
        return None
    return fit_scaler(lag[ok])


def generate_store(spec: SyntheticSpec) -> SyntheticStore:
    """Draw a ground truth and simulate ``horizon_days`` of sales.

    The autoregressive feature needs a standardisation frame before any
    data exist, so the frame is found by fixed-point iteration: simulate,
    refit the scaler on the simulated lags, repeat. Prior draws whose
    simulated sales do not settle (explosive feedback through ``w_s``,
    non-finite values) are rejected and redrawn.
    """
    root = np.random.SeedSequence(spec.seed)
    n, k = spec.n_regions, spec.n_products
    setup = np.random.default_rng(root.spawn(1)[0])
    prices = (np.round(setup.uniform(1.0, 10.0, size=k), 2) if spec.prices is None
              else np.asarray(spec.prices, dtype=float))
    env = RetailEnvironmentSpec(n, k, prices)
    fill = max(1, int(round(spec.initial_fill * n * k)))
    grid = np.zeros(n * k, dtype=np.int8)
    grid[setup.choice(n * k, size=fill, replace=False)] = 1
    board0 = BoardConfig(grid.reshape(n, k))
    truth_rng = np.random.default_rng(root.spawn(2)[1])
    sim_seed = int(setup.integers(2**31))

    for attempt in range(1, spec.max_truth_attempts + 1):
        truth = spec.truth if spec.truth is not None else sample_prior(spec.hyper, truth_rng)
        scaler = SalesScaler(0.0, 1.0)
        # pilot without feedback fixes a first frame
        pilot = ModelParams(**{**truth.__dict__, "w_s": 0.0})
        boards, qs = _simulate(spec, env, pilot, scaler, board0, sim_seed)
        ok = True
        for _ in range(4):
            new = _lag_scaler(_to_dataset(spec, env, boards, qs))
            if new is None or not np.isfinite([new.mean, new.std]).all():
                ok = False
                break
            scaler = new
            boards, qs = _simulate(spec, env, truth, scaler, board0, sim_seed)
            if not np.all(np.isfinite(qs)):
                ok = False
                break
        if ok:
            final = _lag_scaler(_to_dataset(spec, env, boards, qs))
            ok = (final is not None
                  and abs(final.mean - scaler.mean) <= 0.05 * scaler.std
                  and abs(np.log(final.std / scaler.std)) <= 0.05)
        if ok:
            return SyntheticStore(_to_dataset(spec, env, boards, qs), env, truth, scaler, attempt)
        if spec.truth is not None:
            raise ValueError("the supplied ground truth does not give stable sales")
    raise RuntimeError(f"no stable ground truth in {spec.max_truth_attempts} prior draws")


def truth_in_frame(truth: ModelParams, gen: SalesScaler, fit: SalesScaler) -> ModelParams:
    """Express ``truth`` in another standardisation frame of the lag feature.

    ``w_s (g - m0) / s0 = w_s' (g - m1) / s1 + w_s (m1 - m0) / s0``; the
    constant moves into ``b``.
    """
    w_s = truth.w_s * fit.std / gen.std
    b = truth.b + truth.w_s * (fit.mean - gen.mean) / gen.std
    return ModelParams(**{**truth.__dict__, "w_s": float(w_s), "b": float(b)})


# -- files -----------------------------------------------------------------

def write_sales_csv(path, dataset: SalesDataset) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SALES_HEADER)
        for d, i, j, q, p in zip(dataset.day, dataset.region, dataset.product,
                                 dataset.quantity, dataset.price):
            w.writerow([from_day(d).isoformat(), int(i), int(j), repr(float(q)), repr(float(p))])


def write_placements_csv(path, placements: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PLACEMENTS_HEADER)
        for d, i, j in placements:
            w.writerow([from_day(d).isoformat(), int(i), int(j)])


def generate_synthetic(spec: SyntheticSpec, out_dir) -> dict:
    """Write ``sales.csv``, ``placements.csv`` and ``truth.json`` to ``out_dir``.

    Returns the paths keyed by role.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    store = generate_store(spec)
    paths = {"sales": out / SALES_FILE, "placements": out / PLACEMENTS_FILE,
             "truth": out / TRUTH_FILE}
    write_sales_csv(paths["sales"], store.dataset)
    write_placements_csv(paths["placements"], store.dataset.placements)
    truth = {
        "params": store.truth.to_dict(),
        "scaler": store.scaler.to_dict(),
        "env": store.env.to_dict(),
        "hyper": spec.hyper.to_dict(),
        "seed": spec.seed,
        "horizon_days": spec.horizon_days,
        "start_date": spec.start_date.isoformat(),
        "board": spec.board,
        "change_prob": spec.change_prob,
        "truth_attempts": store.attempts,
    }
    paths["truth"].write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return paths


def load_truth(path) -> tuple[ModelParams, SalesScaler, RetailEnvironmentSpec]:
    d = json.loads(Path(path).read_text(encoding="utf-8"))
    return (ModelParams.from_dict(d["params"]), SalesScaler(**d["scaler"]),
            RetailEnvironmentSpec.from_dict(d["env"]))


def _read_rows(path, header):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            first = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        if [c.strip() for c in first] != header:
            raise DataFormatError(f"{path}:1: expected header {','.join(header)}")
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataFormatError(
                    f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            yield lineno, [c.strip() for c in row]


def _parse_key(path, lineno, row, env):
    try:
        day = to_day(dt.date.fromisoformat(row[0]))
    except ValueError:
        raise DataFormatError(f"{path}:{lineno}: bad date {row[0]!r}") from None
    try:
        i, j = int(row[1]), int(row[2])
    except ValueError:
        raise DataFormatError(f"{path}:{lineno}: region_id and product_id must be integers") from None
    if env is not None and not (0 <= i < env.n_regions and 0 <= j < env.n_products):
        raise DataFormatError(f"{path}:{lineno}: unknown region {i} or product {j}")
    if i < 0 or j < 0:
        raise DataFormatError(f"{path}:{lineno}: ids must be non-negative")
    return day, i, j


def load_dataset(sales_path, placements_path, env: RetailEnvironmentSpec | None = None) -> SalesDataset:
    """Parse and validate both files; returns a date-sorted dataset.

    Raises :class:`DataFormatError` naming the offending line for malformed
    values, duplicate ``(date, region_id, product_id)`` keys, ids outside
    ``env``, negative quantities, non-positive prices, and sales rows with
    no matching placement.
    """
    placements = {}
    for lineno, row in _read_rows(placements_path, PLACEMENTS_HEADER):
        key = _parse_key(placements_path, lineno, row, env)
        if key in placements:
            raise DataFormatError(
                f"{placements_path}:{lineno}: duplicate placement {row[0]},{key[1]},{key[2]} "
                f"(first on line {placements[key]})")
        placements[key] = lineno
    keys, qty, price = [], [], []
    seen = {}
    missing = []
    for lineno, row in _read_rows(sales_path, SALES_HEADER):
        key = _parse_key(sales_path, lineno, row, env)
        if key in seen:
            raise DataFormatError(
                f"{sales_path}:{lineno}: duplicate key {row[0]},{key[1]},{key[2]} "
                f"(first on line {seen[key]})")
        seen[key] = lineno
        try:
            q, p = float(row[3]), float(row[4])
        except ValueError:
            raise DataFormatError(f"{sales_path}:{lineno}: quantity and price must be numbers") from None
        if not np.isfinite(q) or q < 0:
            raise DataFormatError(f"{sales_path}:{lineno}: quantity must be a finite value >= 0, got {row[3]}")
        if not np.isfinite(p) or p <= 0:
            raise DataFormatError(f"{sales_path}:{lineno}: price must be positive, got {row[4]}")
        if key not in placements:
            missing.append(lineno)
        keys.append(key)
        qty.append(q)
        price.append(p)
    if missing:
        shown = ", ".join(map(str, missing[:20])) + (" ..." if len(missing) > 20 else "")
        raise DataFormatError(f"{sales_path}: sales rows without a placement on lines {shown}")
    k = np.array(keys, dtype=np.int64).reshape(-1, 3)
    pl = np.array(sorted(placements), dtype=np.int64).reshape(-1, 3)
    ds = SalesDataset(k[:, 0], k[:, 1], k[:, 2], qty, price, pl)
    return ds.sorted()


def infer_environment(dataset: SalesDataset, placement_cost: float = 1.0) -> RetailEnvironmentSpec:
    """Environment implied by a dataset: ids seen and each product's median price."""
    ids = dataset.placements if len(dataset.placements) else np.stack(
        [dataset.day, dataset.region, dataset.product], axis=1)
    n = int(max(ids[:, 1].max(), dataset.region.max())) + 1
    k = int(max(ids[:, 2].max(), dataset.product.max())) + 1
    prices = np.ones(k)
    for j in range(k):
        sel = dataset.product == j
        if sel.any():
            prices[j] = float(np.median(dataset.price[sel]))
    return RetailEnvironmentSpec(n, k, prices, placement_cost=placement_cost)


def train_test_split(dataset: SalesDataset, split_date=DEFAULT_SPLIT_DATE):
    """Rows dated before ``split_date`` train, the rest test; neither may be empty."""
    cut = to_day(split_date)
    train_rows = np.flatnonzero(dataset.day < cut)
    test_rows = np.flatnonzero(dataset.day >= cut)
    if train_rows.size == 0:
        raise ValueError(f"split at {from_day(cut)} leaves the training set empty")
    if test_rows.size == 0:
        raise ValueError(f"split at {from_day(cut)} leaves the test set empty")
    return dataset.take(train_rows), dataset.take(test_rows)
