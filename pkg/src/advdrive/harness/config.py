"""Run configuration: built-in defaults, then a YAML file, then ``section.key=value`` overrides.

Schema (every key optional)::

    seed: 0
    out: runs                      # overridden by --out, defaults to $ADVDRIVE_OUT or ./runs
    env:     EpisodeConfig fields  (lane_count, rule_vehicle_count, episode_duration, ...)
    driver:  DriverParams fields   (v0, T, d0, a, b, delta, politeness, lane_change_threshold, b_safe)
    ppo:     PpoConfig fields      (clip_eps, gamma, gae_lambda, lr, epochs, ...)
    td3:     Td3Config fields      (gamma, tau, policy_delay, target_noise, ...)
    stages:
      ego_ppo:       {total_steps, checkpoint_interval, log_interval}
      adversary_td3: {total_steps, checkpoint_interval, log_interval}
      robust_ppo:    {total_steps, checkpoint_interval, log_interval, warm_start}
    eval:    {episodes, seed}

Unknown keys, wrong types and invariant violations raise :class:`ConfigError`
naming the offending dotted key.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import typing
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from advdrive.behavior import DriverParams
from advdrive.env import EpisodeConfig
from advdrive.errors import ConfigError
from advdrive.learners import PpoConfig, Td3Config

OUT_ENV_VAR = "ADVDRIVE_OUT"


@dataclass(frozen=True)
class StageSettings:
    total_steps: int = 200_000
    checkpoint_interval: int = 50_000
    log_interval: int = 5_000

    def __post_init__(self):
        for name in ("total_steps", "checkpoint_interval", "log_interval"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")


@dataclass(frozen=True)
class RobustStageSettings(StageSettings):
    # start from the stage-1 ego weights when an ego checkpoint is supplied
    warm_start: bool = True


@dataclass(frozen=True)
class Stages:
    ego_ppo: StageSettings = StageSettings()
    adversary_td3: StageSettings = StageSettings()
    robust_ppo: RobustStageSettings = RobustStageSettings()


@dataclass(frozen=True)
class EvalSettings:
    episodes: int = 100
    seed: int = 2024

    def __post_init__(self):
        if self.episodes < 1:
            raise ConfigError("episodes must be >= 1")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    out: str = ""
    env: EpisodeConfig = EpisodeConfig()
    driver: DriverParams = DriverParams()
    ppo: PpoConfig = PpoConfig()
    td3: Td3Config = Td3Config()
    stages: Stages = Stages()
    eval: EvalSettings = field(default_factory=EvalSettings)

    def output_root(self) -> Path:
        return Path(self.out or os.environ.get(OUT_ENV_VAR) or "runs")


def _check_value(value, typ, key):
    origin = typing.get_origin(typ)
    if typ is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected a boolean, got {value!r}")
        return value
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if typ is str:
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    if typ is tuple or origin is tuple:
        if not isinstance(value, (list, tuple)) or not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise ConfigError(f"{key}: expected a list of integers, got {value!r}")
        return tuple(value)
    raise ConfigError(f"{key}: unsupported field type {typ!r}")  # pragma: no cover


def build(cls, data, prefix=""):
    """Instantiate dataclass ``cls`` from a mapping, rejecting unknown keys."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{prefix or 'config'}: expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        dotted = f"{prefix}{key}"
        if key not in names:
            raise ConfigError(f"unknown configuration key {dotted!r}")
        typ = hints[key]
        if dataclasses.is_dataclass(typ):
            kwargs[key] = build(typ, value, dotted + ".")
        else:
            kwargs[key] = _check_value(value, typ, dotted)
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        raise ConfigError(f"{prefix.rstrip('.') or 'config'}: {exc}") from exc
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{prefix.rstrip('.') or 'config'}: {exc}") from exc


def to_dict(cfg) -> dict:
    out = {}
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if dataclasses.is_dataclass(value):
            out[f.name] = to_dict(value)
        elif isinstance(value, tuple):
            out[f.name] = list(value)
        else:
            out[f.name] = value
    return out


def apply_override(tree: dict, assignment: str):
    """Set ``a.b.c=value`` in a nested dict; the value is parsed as YAML."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} must look like section.key=value")
    key, raw = assignment.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError(f"override {assignment!r} has an empty key")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"override {key}: cannot parse {raw!r}: {exc}") from exc
    node = tree
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {key}: {p!r} is not a section")
    node[parts[-1]] = value


def parse_config(text: str = "", overrides=()) -> RunConfig:
    """Resolve a configuration document plus ``key=value`` overrides into a validated :class:`RunConfig`."""
    try:
        tree = yaml.safe_load(text) if text and text.strip() else {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"configuration is not valid YAML: {exc}") from exc
    if tree is None:
        tree = {}
    if not isinstance(tree, dict):
        raise ConfigError("configuration document must be a mapping")
    for assignment in overrides:
        apply_override(tree, assignment)
    return build(RunConfig, tree)


def load_config(path=None, overrides=()) -> RunConfig:
    text = ""
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read configuration {path}: {exc}") from exc
    return parse_config(text, overrides)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=True, default_flow_style=False)


def fingerprint(cfg: RunConfig) -> str:
    """SHA-256 of the resolved configuration, independent of the output location."""
    tree = to_dict(cfg)
    tree.pop("out", None)
    return hashlib.sha256(json.dumps(tree, sort_keys=True).encode()).hexdigest()
