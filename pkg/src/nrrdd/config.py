"""Experiment configuration: JSON files plus dotted-path overrides."""
from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field

from .discovery import CiddConfig
from .labels import MODES
from .mixing import METHODS
from .refine import RefineConfig
from .teacher import TeacherConfig
from .transfer import TransferConfig


class ConfigError(ValueError):
    pass


@dataclass
class DatasetConfig:
    name: str = "shapes"
    root: str | None = None
    num_classes: int = 10
    per_class_train: int = 200
    per_class_test: int = 200
    image_hw: int = 32
    class_subset: list[int] | None = None
    per_class_limit: int | None = None
    seed: int = 1234


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    teacher: TeacherConfig = field(default_factory=TeacherConfig)
    cidd: CiddConfig = field(default_factory=CiddConfig)
    refine: RefineConfig = field(default_factory=RefineConfig)
    transfer: TransferConfig = field(default_factory=TransferConfig)
    teacher_arch: str = "convnet3"
    student_arch: str = "convnet3"
    ipc: int = 10
    beta: int = 1
    label_mode: str = "dbr"
    pairs_per_image: int = 1
    random_baseline: bool = False
    out_dir: str = "runs/exp"
    seed: int = 0


_NESTED = {
    "dataset": DatasetConfig,
    "teacher": TeacherConfig,
    "cidd": CiddConfig,
    "refine": RefineConfig,
    "transfer": TransferConfig,
}


def _coerce(current, value):
    if isinstance(current, tuple) and isinstance(value, list):
        return tuple(value)
    return value


def _build(dc_type, data: dict):
    if not isinstance(data, dict):
        raise ConfigError(f"expected a mapping for {dc_type.__name__}, got {type(data).__name__}")
    known = {f.name: f for f in dataclasses.fields(dc_type)}
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown {dc_type.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    template = dc_type()
    for name, value in data.items():
        if name in _NESTED and isinstance(value, dict):
            kwargs[name] = _build(_NESTED[name], value)
        else:
            kwargs[name] = _coerce(getattr(template, name), value)
    return dc_type(**kwargs)


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)


def config_from_dict(data: dict) -> ExperimentConfig:
    cfg = _build(ExperimentConfig, data)
    validate_config(cfg)
    return cfg


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path) as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}")
    return config_from_dict(data)


def save_config(cfg: ExperimentConfig, path: str) -> None:
    with open(path, "w") as f:
        json.dump(config_to_dict(cfg), f, sort_keys=True, indent=1)


def apply_overrides(cfg: ExperimentConfig, overrides: list[str]) -> ExperimentConfig:
    """Apply `dotted.path=value` overrides; values parse as JSON with string fallback."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override '{item}' is not of the form key=value")
        path, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        obj = cfg
        parts = path.split(".")
        for part in parts[:-1]:
            if not hasattr(obj, part):
                raise ConfigError(f"unknown config path '{path}'")
            obj = getattr(obj, part)
        leaf = parts[-1]
        if not dataclasses.is_dataclass(obj) or not hasattr(obj, leaf):
            raise ConfigError(f"unknown config path '{path}'")
        setattr(obj, leaf, _coerce(getattr(obj, leaf), value))
    validate_config(cfg)
    return cfg


def validate_config(cfg: ExperimentConfig) -> None:
    side = int(round(math.sqrt(cfg.beta)))
    if side * side != cfg.beta or cfg.beta < 1:
        raise ConfigError(f"beta must be a positive perfect square, got {cfg.beta}")
    if cfg.ipc < 1:
        raise ConfigError("ipc must be >= 1")
    if cfg.label_mode not in MODES:
        raise ConfigError(f"label_mode must be one of {MODES}, got '{cfg.label_mode}'")
    if cfg.refine.mix_method not in METHODS:
        raise ConfigError(f"refine.mix_method must be one of {METHODS}")
    if cfg.cidd.selection not in ("lowest", "highest"):
        raise ConfigError("cidd.selection must be 'lowest' or 'highest'")
    if not (0.0 < cfg.refine.epsilon < 1.0):
        raise ConfigError("refine.epsilon must be in (0, 1)")
    if cfg.pairs_per_image < 1:
        raise ConfigError("pairs_per_image must be >= 1")
