"""Command-line pipeline: synthetic data, fitting, evaluation and policies."""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import hashlib
import json
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import MlpConfig
from .config import ConfigError, RunConfig, load_config
from .core import RetailEnvironmentSpec
from .data import (PLACEMENTS_FILE, SALES_FILE, TRUTH_FILE, DataFormatError, SyntheticSpec,
                   generate_synthetic, infer_environment, load_dataset, train_test_split)
from .evaluation import (episode_factory, evaluate_models, evaluate_policies,
                         standard_policies, write_model_reports)
from .features import SalesScaler, build_design_matrix
from .inference import (fit_posterior, load_posterior, predict_revenue,
                        save_posterior)
from .inference.predict import draws_to_params
from .model import ParamLayout
from .policies import dqn_train, load_qnet, save_qnet, write_training_log
from .records import from_day, to_day
from .sim import DemandDraws

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_FAILED_FIT = 2


# -- helpers -------------------------------------------------------------------

def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: Path, command: str, cfg: RunConfig, seed: int, inputs, outputs,
                   started: float, argv) -> Path:
    """Record what a command read and wrote, with content hashes."""
    path = out_dir / f"{command}.manifest.json"
    manifest = {
        "command": command,
        "argv": list(argv),
        "version": f"retailsim {__version__}",
        "config_hash": cfg.digest(),
        "seed": seed,
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": {str(p): sha256_file(p) for p in outputs},
        "elapsed_sec": round(time.perf_counter() - started, 3),
    }
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _config(args) -> RunConfig:
    cfg = load_config(getattr(args, "config", None))
    if getattr(args, "preset", None):
        cfg = cfg.with_preset(args.preset)
    return cfg


def _load_store(data_dir: Path, cfg: RunConfig):
    sales, placements = data_dir / SALES_FILE, data_dir / PLACEMENTS_FILE
    truth = data_dir / TRUTH_FILE
    if truth.exists():
        env = RetailEnvironmentSpec.from_dict(json.loads(truth.read_text("utf-8"))["env"])
    else:
        env = None
    dataset = load_dataset(sales, placements, env)
    if env is None:
        env = infer_environment(dataset, cfg.data.placement_cost)
    return dataset, env, [p for p in (sales, placements, truth) if p.exists()]


def split_designs(dataset, env, split_date):
    """Train rows before ``split_date`` and test rows from it on.

    The lag scaler is fitted on the training rows; test rows take their lag
    from the full history so the first test day keeps its previous day.
    """
    train, _ = train_test_split(dataset, split_date)
    dm_train, scaler = build_design_matrix(train, env)
    dm_all, _ = build_design_matrix(dataset, env, scaler)
    test = dm_all.take(np.flatnonzero(dm_all.day >= to_day(split_date)))
    if len(test) == 0:
        raise ValueError("no test rows with an observed previous day")
    return dm_train, test, scaler


class PosteriorBundle:
    """Draws plus everything needed to use them: layout, scaler, environment."""

    def __init__(self, path):
        self.draws, self.meta = load_posterior(path)
        self.layout = ParamLayout(self.meta["n_regions"], self.meta["n_products"],
                                  self.meta.get("hierarchical", False))
        self.scaler = SalesScaler(**self.meta["scaler"])
        self.env = RetailEnvironmentSpec.from_dict(self.meta["env"])

    def demand(self, count: int) -> DemandDraws:
        return DemandDraws.from_params(draws_to_params(self.draws, self.layout, count))


def _date(text) -> dt.date:
    return dt.date.fromisoformat(text)


# -- commands --------------------------------------------------------------------

def cmd_gen_data(args, argv) -> int:
    t0 = time.perf_counter()
    cfg = load_config(args.spec or args.config)
    d = cfg.data
    seed = args.seed
    spec = SyntheticSpec(n_regions=d.n_regions, n_products=d.n_products,
                         horizon_days=d.horizon_days, seed=seed, start_date=d.start_date,
                         hyper=cfg.model.hyper(d.n_regions, d.n_products), board=d.board,
                         change_prob=d.change_prob, initial_fill=d.initial_fill)
    out = Path(args.out_dir)
    paths = generate_synthetic(spec, out)
    write_manifest(out, "gen-data", cfg, seed, [], list(paths.values()), t0, argv)
    print(f"wrote {', '.join(str(p) for p in paths.values())}")
    return EXIT_OK


def cmd_fit(args, argv) -> int:
    t0 = time.perf_counter()
    cfg = _config(args)
    overrides = {"threads": args.threads}
    if args.seed is not None:
        overrides["seed"] = args.seed
    fit_cfg = replace(cfg.fit, **overrides)
    data_dir = Path(args.data_dir)
    dataset, env, inputs = _load_store(data_dir, cfg)
    dm_train, _, scaler = split_designs(dataset, env, _date(cfg.data.split_date))
    hyper = cfg.model.hyper(env.n_regions, env.n_products)
    result = fit_posterior(dm_train.design(), hyper, fit_cfg)
    draws = result.draws
    elapsed = draws.info.pop("elapsed_sec", None)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "n_regions": env.n_regions, "n_products": env.n_products,
        "hierarchical": hyper.hierarchical, "scaler": scaler.to_dict(), "env": env.to_dict(),
        "hyper": hyper.to_dict(), "fit_config": fit_cfg.to_dict(),
        "config_hash": cfg.digest(), "seed": fit_cfg.seed,
        "split_date": cfg.data.split_date,
    }
    save_posterior(out, draws, header)
    diag = draws.diagnostics()
    report = {
        "failed": draws.failed,
        "divergences": draws.divergences().tolist(),
        "max_rhat": max((v["rhat"] for v in diag.values() if v["rhat"] is not None),
                        default=None),
        "min_ess_bulk": min(v["ess_bulk"] for v in diag.values()),
        "parameters": diag,
    }
    report_path = out.with_name(out.name + ".diagnostics.json")
    report_path.write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    write_manifest(out.parent, "fit", cfg, fit_cfg.seed, inputs, [out, report_path], t0, argv)
    rhat = "n/a" if report["max_rhat"] is None else f"{report['max_rhat']:.4f}"
    print(f"max R-hat {rhat}, min bulk ESS {report['min_ess_bulk']:.0f}, "
          f"divergences {report['divergences']}, sampling {elapsed or 0.0:.0f}s")
    if draws.failed:
        print("fit failed: divergent-transition threshold exceeded", file=sys.stderr)
        return EXIT_FAILED_FIT
    return EXIT_OK


def cmd_evaluate(args, argv) -> int:
    t0 = time.perf_counter()
    cfg = _config(args)
    bundle = PosteriorBundle(args.posterior)
    dataset, _, inputs = _load_store(Path(args.data_dir), cfg)
    split = _date(bundle.meta.get("split_date", cfg.data.split_date))
    dm_train, test, scaler = split_designs(dataset, bundle.env, split)
    if scaler != bundle.scaler:
        raise ValueError("posterior was fitted on a different training split")
    seed = args.seed
    pred = predict_revenue(bundle.draws, test, bundle.layout, thin=cfg.eval.thin,
                           seed=seed, level=cfg.eval.level)
    mlp_cfg = MlpConfig(epochs=cfg.eval.mlp_epochs, learning_rate=cfg.eval.mlp_learning_rate,
                        batch_size=cfg.eval.mlp_batch_size, seed=seed)
    reports = evaluate_models(dm_train, test, pred.mean, seed=seed, mlp_config=mlp_cfg,
                              rf_trees=cfg.eval.rf_trees)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps({"models": [asdict(r) for r in reports],
                               "test_rows": len(test), "test_days": int(pred.days.size)},
                              indent=2) + "\n", encoding="utf-8")
    table = out.with_suffix(".csv")
    write_model_reports(table, reports)
    daily = out.with_name(out.stem + "_daily.csv")
    truth_days, truth_daily = np.unique(test.day, return_inverse=True)
    truth_daily = np.bincount(truth_daily, weights=test.y * test.price)
    with open(daily, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["date", "truth", "mean", "lo95", "hi95"])
        for d, t, m, lo, hi in zip(pred.days, truth_daily, pred.daily_mean,
                                   pred.daily_lower, pred.daily_upper):
            w.writerow([from_day(d).isoformat(), repr(float(t)), repr(float(m)),
                        repr(float(lo)), repr(float(hi))])
    write_manifest(out.parent, "evaluate", cfg, seed, [*inputs, Path(args.posterior)],
                   [out, table, daily], t0, argv)
    for r in reports:
        print(f"{r.model:4s} mse {r.mse:12.3f} mae {r.mae:9.3f} "
              f"directional {r.directional_accuracy:.3f}")
    return EXIT_OK


def cmd_train_dqn(args, argv) -> int:
    t0 = time.perf_counter()
    cfg = _config(args)
    dqn_cfg = cfg.dqn
    if args.iterations is not None:
        dqn_cfg = replace(dqn_cfg, training_iterations=args.iterations)
    bundle = PosteriorBundle(args.posterior)
    env = RetailEnvironmentSpec.from_dict(json.loads(Path(args.env).read_text("utf-8"))) \
        if args.env else bundle.env
    factory = episode_factory(env, bundle.demand(cfg.eval.sim_draws), bundle.scaler,
                              cfg.sim, seed=args.seed, fill=cfg.eval.fill)
    net, log = dqn_train(factory, dqn_cfg, seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_qnet(out, net, dqn_cfg, {"seed": args.seed, "env": env.to_dict()})
    log_path = out.with_name(out.stem + "_log.csv")
    write_training_log(log_path, log)
    inputs = [Path(args.posterior)] + ([Path(args.env)] if args.env else [])
    write_manifest(out.parent, "train-dqn", cfg, args.seed, inputs, [out, log_path], t0, argv)
    if log:
        print(f"trained {dqn_cfg.training_iterations} steps; last window mean reward "
              f"{log[-1].mean_reward:.2f}")
    return EXIT_OK


def cmd_evaluate_policies(args, argv) -> int:
    t0 = time.perf_counter()
    cfg = _config(args)
    bundle = PosteriorBundle(args.posterior)
    net, dqn_cfg, _ = load_qnet(args.qnet)
    lengths = tuple(int(v) for v in args.lengths.split(",")) if args.lengths \
        else cfg.eval.lengths
    seeds = range(args.seeds if args.seeds is not None else cfg.eval.seeds)
    fill = args.fill if args.fill is not None else cfg.eval.fill
    table = evaluate_policies(bundle.env, bundle.demand(cfg.eval.sim_draws), bundle.scaler,
                              standard_policies(net, dqn_cfg), lengths, seeds, fill=fill,
                              sim_config=cfg.sim, base_seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    table.write_csv(out)
    summary = out.with_name(out.stem + "_summary.csv")
    table.write_summary_csv(summary)
    write_manifest(out.parent, "evaluate-policies", cfg, args.seed,
                   [Path(args.posterior), Path(args.qnet)], [out, summary], t0, argv)
    for (policy, length), value in table.medians().items():
        print(f"{policy:7s} {length:3d} days  median {value:14.2f}")
    return EXIT_OK


# -- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="retailsim", description=__doc__)
    p.add_argument("--version", action="version", version=f"retailsim {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic store")
    g.add_argument("--spec", help="config file with data.* and model.* keys")
    g.add_argument("--config", help="config file (same as --spec)")
    g.add_argument("--out-dir", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_data)

    f = sub.add_parser("fit", help="sample the posterior with NUTS")
    f.add_argument("--data-dir", required=True)
    f.add_argument("--config")
    f.add_argument("--preset", choices=["full", "desk"])
    f.add_argument("--out", required=True)
    f.add_argument("--seed", type=int)
    f.add_argument("--threads", type=int, default=1)
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("evaluate", help="compare forecasts with the baselines")
    e.add_argument("--data-dir", required=True)
    e.add_argument("--posterior", required=True)
    e.add_argument("--config")
    e.add_argument("--out", required=True)
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_evaluate)

    t = sub.add_parser("train-dqn", help="train a deep Q-network in the simulator")
    t.add_argument("--posterior", required=True)
    t.add_argument("--env", help="environment JSON; defaults to the posterior's")
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--iterations", type=int)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--threads", type=int, default=1)
    t.set_defaults(func=cmd_train_dqn)

    v = sub.add_parser("evaluate-policies", help="paired rollouts of all policies")
    v.add_argument("--posterior", required=True)
    v.add_argument("--qnet", required=True)
    v.add_argument("--config")
    v.add_argument("--lengths", help="comma separated episode lengths")
    v.add_argument("--seeds", type=int)
    v.add_argument("--fill", type=float, help="share of cells occupied initially")
    v.add_argument("--out", required=True)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--threads", type=int, default=1)
    v.set_defaults(func=cmd_evaluate_policies)
    return p


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    try:
        return args.func(args, argv)
    except (ConfigError, DataFormatError, FileNotFoundError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
