"""Strict JSON experiment configuration.

One document with sections ``sampler``, ``trajgen``, ``systems``, ``model``,
``train`` and ``eval`` plus a ``version`` field. Every section is optional
(defaults apply) but unknown keys anywhere are rejected.
"""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .baselines import FnnConfig
from .model import SMALL, ModelConfig
from .rkhs import KernelConfig, SamplerConfig
from .systems import CartPoleParams, PinkNoiseConfig
from .training import AugConfig, Phase, TrainConfig
from .trajgen import TrajGenConfig

CONFIG_VERSION = 1


class ConfigError(ValueError):
    pass


def _build(cls, data, where: str):
    if dataclasses.is_dataclass(data) and isinstance(data, cls):
        return data
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {unknown}; allowed {sorted(fields)}")
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for k, v in data.items():
        sub = _nested.get((cls, k)) or (hints[k] if dataclasses.is_dataclass(hints[k]) else None)
        kwargs[k] = _build(sub, v, f"{where}.{k}") if sub and v is not None else v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from None


@dataclass(frozen=True)
class SystemsConfig:
    kind: str = "cartpole-fixed"  # cartpole-fixed | cartpole-randomized | recorded
    n: int = 1000
    init_spread: float = 0.2
    dt: float = 0.02
    length: int = 64
    substeps: int = 4
    params: CartPoleParams = field(default_factory=CartPoleParams)
    param_spread: float = 0.5
    pink_noise: PinkNoiseConfig = field(default_factory=lambda: PinkNoiseConfig(amplitude=0.3))
    path: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("cartpole-fixed", "cartpole-randomized", "recorded"):
            raise ValueError(f"unknown systems kind {self.kind!r}")
        if self.kind == "recorded" and not self.path:
            raise ValueError("systems.kind 'recorded' needs a path")


def _system_training() -> TrainConfig:
    # small subsets get at least 200 optimiser steps
    return TrainConfig(lr=1e-3, epochs=8, min_steps=200, lr_schedule="cosine", phase=Phase.FINETUNE)


@dataclass(frozen=True)
class TrainSection:
    # defaults are the desk-scale settings the acceptance suite uses
    pretrain: TrainConfig = field(
        default_factory=lambda: TrainConfig(lr=1e-3, epochs=20, batch_size=16, lr_schedule="cosine"))
    finetune: TrainConfig = field(default_factory=lambda: _system_training())
    scratch: TrainConfig = field(default_factory=lambda: _system_training())
    fnn: FnnConfig = field(default_factory=FnnConfig)


@dataclass(frozen=True)
class EvalConfig:
    models: tuple = ("Pre", "Ft", "LR", "FNN", "ST")
    levels: tuple = (0.02, 0.1, 1.0)
    repeats: int = 5
    seed: int = 0
    test_fraction: float = 0.1
    split_seed: int = 0
    dataset: str | None = None
    dataset_tag: str | None = None
    pretrained: str | None = None
    ridge: float = 1e-8
    small_model: ModelConfig = SMALL
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "models", tuple(self.models))
        object.__setattr__(self, "levels", tuple(float(v) for v in self.levels))
        bad = [m for m in self.models if m not in ("Pre", "Ft", "LR", "FNN", "ST")]
        if bad:
            raise ValueError(f"unknown model tags {bad}")
        if any(not 0 < v <= 1 for v in self.levels):
            raise ValueError("levels must lie in (0, 1]")
        if self.repeats < 1 or self.workers < 1:
            raise ValueError("repeats and workers must be >= 1")
        if not 0 < self.test_fraction < 1:
            raise ValueError("test_fraction must lie in (0, 1)")


@dataclass(frozen=True)
class ExperimentConfig:
    version: int = CONFIG_VERSION
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    trajgen: TrajGenConfig = field(default_factory=TrajGenConfig)
    systems: SystemsConfig = field(default_factory=SystemsConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if self.version != CONFIG_VERSION:
            raise ValueError(f"unsupported config version {self.version!r}")


_nested = {
    (SamplerConfig, "kernel"): KernelConfig,
    (TrainConfig, "aug"): AugConfig,
    (SystemsConfig, "params"): CartPoleParams,
    (SystemsConfig, "pink_noise"): PinkNoiseConfig,
    (EvalConfig, "small_model"): ModelConfig,
}


def config_from_dict(d: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, d, "config")


def load_config(path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    return config_from_dict(data)


def to_dict(obj):
    """Plain JSON-ready form of a config dataclass."""
    if dataclasses.is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [to_dict(v) for v in obj]
    if isinstance(obj, Phase):
        return obj.value
    return obj
