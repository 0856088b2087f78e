"""Run configuration: defaults, then a JSON config file, then command-line flags."""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .aime import STRATEGIES, AimeConfig
from .contingency.costs import PlannerConfig
from .policy import RewardWeights
from .predictor import PredictorConfig
from .sim import SimOptions

ENV_VAR = "MIND_KIT_CONFIG"
SECTIONS = {"aime": AimeConfig, "predictor": PredictorConfig, "planner": PlannerConfig,
            "reward": RewardWeights, "sim": SimOptions}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    aime: AimeConfig = field(default_factory=AimeConfig)
    predictor: PredictorConfig = field(default_factory=PredictorConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    reward: RewardWeights = field(default_factory=RewardWeights)
    sim: SimOptions = field(default_factory=SimOptions)
    seed: int = 0
    strategy: str = "aime"
    horizon: int = 60
    chance_samples: int = 2000

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}")
        if self.horizon < 1 or self.chance_samples < 1:
            raise ConfigError("horizon and chance_samples must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)


def _section(cls, current, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be an object")
    names = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(names))
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {', '.join(unknown)}")
    kw = {}
    for key, val in data.items():
        default = getattr(current, key)
        if isinstance(default, tuple):
            val = tuple(val)
        elif isinstance(default, bool):
            val = bool(val)
        elif isinstance(default, int) and not isinstance(default, bool):
            if isinstance(val, float) and not val.is_integer():
                raise ConfigError(f"{where}.{key} must be an integer")
            val = int(val)
        elif isinstance(default, float):
            val = float(val)
        kw[key] = val
    try:
        return replace(current, **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def merge(base: RunConfig, data: dict, where: str = "config") -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"{where} must be a JSON object")
    top = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - top)
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {', '.join(unknown)}")
    kw = {}
    for key, val in data.items():
        if key in SECTIONS:
            kw[key] = _section(SECTIONS[key], getattr(base, key), val, f"{where}.{key}")
        else:
            kw[key] = val
    try:
        return replace(base, **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_file(path) -> dict:
    p = Path(path)
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {p}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {p} is not valid JSON: {exc}") from exc


def resolve(config_path=None, overrides: dict | None = None) -> RunConfig:
    """defaults < file (explicit path, else $MIND_KIT_CONFIG) < overrides."""
    cfg = RunConfig()
    path = config_path or os.environ.get(ENV_VAR)
    if path:
        cfg = merge(cfg, load_file(path), str(path))
    if overrides:
        cfg = merge(cfg, overrides, "flags")
    return cfg
