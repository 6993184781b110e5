"""Flat ``section.key = value`` configuration with typed defaults.

Sections map onto the dataclasses that consume them. Unknown keys are
errors. Lines starting with ``#`` and blank lines are ignored; sequences are
comma separated.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .inference.fit import PRESETS, FitConfig
from .model import Hyperparams
from .policies import DqnConfig
from .sim import SimulatorConfig

CONFIG_ENV_VAR = "RETAILSIM_CONFIG"


class ConfigError(ValueError):
    pass


@dataclass
class ModelSection:
    """Scalar and vector prior settings; matrices keep their defaults."""
    mu_r: tuple = ()            # empty: zeros
    gamma_r: float = 25.0
    delta_p: tuple = ()         # empty: 2.5 each
    sigma_p: float = 2.5
    delta_t: tuple = ()         # empty: built-in weekday means
    sigma_t: float = 2.5
    phi_s: float = 1.0
    psi_s: float = 2.5
    alpha_q: float = 1.0
    beta_q: float = 1.0
    b_scale: float = 10.0
    lkj_eta: float = 2.0
    hierarchical: bool = False

    def hyper(self, n_regions: int, n_products: int) -> Hyperparams:
        kw = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        for name in ("mu_r", "delta_p", "delta_t"):
            kw[name] = list(kw[name]) if kw[name] else None
        return Hyperparams(n_regions, n_products, **kw)


@dataclass
class DataSection:
    n_regions: int = 6
    n_products: int = 5
    horizon_days: int = 365
    start_date: str = "2018-08-01"
    board: str = "random_walk"
    change_prob: float = 0.2
    initial_fill: float = 0.5
    split_date: str = "2019-07-05"
    placement_cost: float = 1.0


@dataclass
class EvalSection:
    thin: int = 500             # posterior draws used for predictive summaries
    level: float = 0.95
    rf_trees: int = 100
    mlp_epochs: int = 200
    mlp_learning_rate: float = 1e-3
    mlp_batch_size: int = 32
    lengths: tuple = (30, 60, 90)
    seeds: int = 5
    fill: float = 0.5           # share of cells occupied in initial boards
    sim_draws: int = 200        # posterior draws available to the simulator


SECTIONS = {
    "model": ModelSection,
    "data": DataSection,
    "fit": FitConfig,
    "sim": SimulatorConfig,
    "dqn": DqnConfig,
    "eval": EvalSection,
}

# fields whose default does not reveal the type
_TYPES = {
    ("sim", "placement_cost"): "optional_float",
    ("model", "mu_r"): "floats",
    ("model", "delta_p"): "floats",
    ("model", "delta_t"): "floats",
    ("dqn", "hidden"): "ints",
    ("eval", "lengths"): "ints",
}


def _field_default(f):
    if f.default is not dataclasses.MISSING:
        return f.default
    if f.default_factory is not dataclasses.MISSING:
        return f.default_factory()
    return None


def _convert(section: str, key: str, default, text: str):
    kind = _TYPES.get((section, key))
    text = text.strip()
    try:
        if kind == "optional_float":
            return None if text.lower() in ("", "none") else float(text)
        if kind in ("floats", "ints"):
            cast = float if kind == "floats" else int
            return tuple(cast(v) for v in text.split(",") if v.strip())
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        return text
    except ValueError:
        raise ConfigError(f"{section}.{key}: cannot parse {text!r}") from None


@dataclass
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    data: DataSection = field(default_factory=DataSection)
    fit: FitConfig = field(default_factory=FitConfig)
    sim: SimulatorConfig = field(default_factory=SimulatorConfig)
    dqn: DqnConfig = field(default_factory=DqnConfig)
    eval: EvalSection = field(default_factory=EvalSection)

    def to_dict(self) -> dict:
        out = {}
        for name in SECTIONS:
            sec = dataclasses.asdict(getattr(self, name))
            out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in sec.items()
                         if k != "callback"}
        return out

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()

    def with_values(self, values: dict) -> "RunConfig":
        """Copy with ``{"section.key": text}`` overrides applied."""
        sections = {name: dataclasses.asdict(getattr(self, name)) for name in SECTIONS}
        for dotted, text in values.items():
            section, _, key = dotted.partition(".")
            if section not in SECTIONS or not key:
                raise ConfigError(f"unknown config key {dotted!r}")
            known = {f.name: f for f in dataclasses.fields(SECTIONS[section])}
            if key not in known:
                raise ConfigError(f"unknown config key {dotted!r}")
            sections[section][key] = _convert(section, key, _field_default(known[key]), text)
        try:
            return RunConfig(**{name: SECTIONS[name](**sections[name]) for name in SECTIONS})
        except (TypeError, ValueError) as err:
            raise ConfigError(str(err)) from None

    def with_preset(self, preset: str) -> "RunConfig":
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        return self.with_values({f"fit.{k}": str(v) for k, v in PRESETS[preset].items()})


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value")
        key, _, val = line.partition("=")
        key = key.strip()
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        values[key] = val.strip()
    return values


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the file at ``path`` (or ``$RETAILSIM_CONFIG``), then ``overrides``."""
    path = path or os.environ.get(CONFIG_ENV_VAR) or None
    cfg = RunConfig()
    if path:
        p = Path(path)
        cfg = cfg.with_values(parse_config_text(p.read_text(encoding="utf-8"), str(p)))
    if overrides:
        cfg = cfg.with_values(overrides)
    return cfg


def format_config(cfg: RunConfig) -> str:
    lines = []
    for section, values in cfg.to_dict().items():
        for key, val in values.items():
            if isinstance(val, list):
                val = ",".join(str(v) for v in val)
            lines.append(f"{section}.{key} = {val}")
    return "\n".join(lines) + "\n"
