"""TOML experiment configuration with strict key and type validation."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any

import tomli
import tomli_w

from .envs.base import CLEANUP_PRESETS, EnvConfig
from .trainer import SHARING_MODES, TrainConfig

EXPERIMENT_KEYS = {"out_dir": str, "seeds": list, "checkpoint_interval": int, "sharing": str}


class ConfigError(ValueError):
    """Schema or value problem in a configuration file (maps to exit code 2)."""


@dataclass(frozen=True)
class ExperimentConfig:
    env: EnvConfig
    train: TrainConfig
    out_dir: str = "runs"
    seeds: tuple[int, ...] = (0,)
    checkpoint_interval: int = 0
    sharing: str = "learned"

    def for_seed(self, seed: int) -> "ExperimentConfig":
        return ExperimentConfig(self.env.with_(seed=seed), self.train.with_(seed=seed), self.out_dir,
                                self.seeds, self.checkpoint_interval, self.sharing)

    def to_dict(self) -> dict:
        return {
            "experiment": {"out_dir": self.out_dir, "seeds": list(self.seeds),
                           "checkpoint_interval": self.checkpoint_interval, "sharing": self.sharing},
            "env": asdict(self.env),
            "train": asdict(self.train),
        }

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())


def _check_type(section: str, key: str, value: Any, expected: type) -> Any:
    where = f"[{section}] {key}"
    if expected is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {type(value).__name__}")
        if not math.isfinite(value):
            raise ConfigError(f"{where}: value must be finite")
        return float(value)
    if expected is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {type(value).__name__}")
        return value
    if not isinstance(value, expected):
        raise ConfigError(f"{where}: expected {expected.__name__}, got {type(value).__name__}")
    return value


def _field_types(cls) -> dict[str, type]:
    lookup = {"int": int, "float": float, "str": str, "bool": bool}
    return {f.name: lookup[f.type] if isinstance(f.type, str) else f.type for f in fields(cls)}


def _section(raw: dict, name: str, cls) -> dict:
    table = raw.get(name, {})
    if not isinstance(table, dict):
        raise ConfigError(f"[{name}] must be a table")
    types = _field_types(cls)
    unknown = sorted(set(table) - set(types))
    if unknown:
        raise ConfigError(f"[{name}] unknown key(s): {', '.join(unknown)}")
    return {k: _check_type(name, k, v, types[k]) for k, v in table.items()}


def from_dict(raw: dict) -> ExperimentConfig:
    unknown = sorted(set(raw) - {"experiment", "env", "train"})
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    env_kw = _section(raw, "env", EnvConfig)
    train_kw = _section(raw, "train", TrainConfig)
    exp = raw.get("experiment", {})
    if not isinstance(exp, dict):
        raise ConfigError("[experiment] must be a table")
    bad = sorted(set(exp) - set(EXPERIMENT_KEYS))
    if bad:
        raise ConfigError(f"[experiment] unknown key(s): {', '.join(bad)}")
    exp = {k: _check_type("experiment", k, v, EXPERIMENT_KEYS[k]) for k, v in exp.items()}
    seeds = exp.get("seeds", [0])
    if not seeds or not all(isinstance(s, int) and not isinstance(s, bool) for s in seeds):
        raise ConfigError("[experiment] seeds: expected a non-empty list of integers")
    sharing = exp.get("sharing", "learned")
    if sharing not in SHARING_MODES:
        raise ConfigError(f"[experiment] sharing: expected one of {SHARING_MODES}, got {sharing!r}")
    try:
        kind = env_kw.get("kind", "ipd")
        if kind == "cleanup":
            preset = CLEANUP_PRESETS.get(env_kw.get("map", "small"), {})
            env_kw = {**preset, **env_kw}
        env = EnvConfig(**env_kw)
        train = TrainConfig.for_env(env.kind, **train_kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    interval = exp.get("checkpoint_interval", 0)
    if interval < 0:
        raise ConfigError("[experiment] checkpoint_interval must be nonnegative")
    return ExperimentConfig(env, train, exp.get("out_dir", "runs"), tuple(seeds), interval, sharing)


def loads(text: str) -> ExperimentConfig:
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    return from_dict(raw)


def load(path: str | Path) -> ExperimentConfig:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    return loads(p.read_text())
