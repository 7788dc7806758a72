"""Experiment configuration: nested dataclasses, strict JSON loading, and
dotted-path flag overrides.

Unknown keys are hard errors naming the offending dotted path, so a typo in
a protocol knob can never be silently ignored.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .datasets import SyntheticConfig
from .errors import ConfigError

__all__ = [
    "ModelConfig",
    "DataConfig",
    "SplitConfig",
    "TrainingConfig",
    "SweepConfig",
    "ExperimentConfig",
    "load_config",
    "config_from_dict",
    "config_to_dict",
    "apply_overrides",
    "resolve_data_path",
]

DATA_ROOT_ENV = "FITNET_DATA_ROOT"


@dataclass
class ModelConfig:
    kind: str = "fit"
    hidden_size: int = 32       # BiLSTM hidden width per direction
    cell_size: int = 8          # memory-cell output width per signal
    head_hidden: int = 32
    fusion_size: int = 32
    cell_activation: str | None = None  # None = purely affine memory cells
    support_k: int = 2          # supports per signal for the *_v kinds


@dataclass
class DataConfig:
    source: str = "synthetic"   # synthetic | long_csv | physionet | cache
    path: str | None = None     # csv file / record dir / cache dir
    labels_path: str | None = None  # label csv / outcomes file
    grid_step: float = 1.0
    slow_grid_step: float | None = None  # defaults to 8 * grid_step
    horizon: float = 48.0
    mean_mode: str = "global"   # global | per_record fallback mean (x_avg)
    missingness: float = 0.0    # controlled removal fraction on raw records
    missing_seed: int = 1234
    branch_overrides: dict = field(default_factory=dict)
    synthetic: SyntheticConfig | None = None


@dataclass
class SplitConfig:
    ratios: list = field(default_factory=lambda: [0.64, 0.16, 0.20])
    seed: int = 0
    vary_with_training_seed: bool = False  # distinct split per training seed


@dataclass
class TrainingConfig:
    optimizer: str = "adam"
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    clip_norm: float = 5.0
    epochs: int = 300
    patience: int = 15
    batch_size: int = 32
    seeds: list = field(default_factory=lambda: [0])


@dataclass
class SweepConfig:
    fractions: list = field(default_factory=lambda: [0.3, 0.5, 0.7, 0.9])
    models: list = field(default_factory=lambda: ["ba_mean", "fit"])
    workers: int = 1


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    data: DataConfig = field(default_factory=DataConfig)
    split: SplitConfig = field(default_factory=SplitConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    sweep: SweepConfig = field(default_factory=SweepConfig)
    output_dir: str = "runs/latest"

    def validate(self):
        if not self.training.seeds:
            raise ConfigError("training.seeds must not be empty")
        if self.training.epochs < 1:
            raise ConfigError("training.epochs must be >= 1")
        if self.training.patience < 0:
            raise ConfigError("training.patience must be >= 0")
        if self.training.batch_size < 1:
            raise ConfigError("training.batch_size must be >= 1")
        if not 0.0 <= self.data.missingness <= 1.0:
            raise ConfigError(f"data.missingness {self.data.missingness} outside [0, 1]")
        if self.data.source not in ("synthetic", "long_csv", "physionet", "cache"):
            raise ConfigError(f"unknown data.source {self.data.source!r}")
        if self.data.mean_mode not in ("global", "per_record"):
            raise ConfigError(f"unknown data.mean_mode {self.data.mean_mode!r}")
        if self.data.source == "synthetic" and self.data.synthetic is None:
            raise ConfigError("data.synthetic must be set when data.source is synthetic")
        if self.model.support_k < 0:
            raise ConfigError("model.support_k must be >= 0")
        return self


def _build_dataclass(cls, data, path):
    if not isinstance(data, dict):
        raise ConfigError(f"config key {path or '<root>'} must be an object, got {data!r}")
    field_map = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        dotted = f"{path}.{key}" if path else key
        if key not in field_map:
            raise ConfigError(f"unknown config key: {dotted}")
        kwargs[key] = _convert(field_map[key], value, dotted)
    return cls(**kwargs)


_NESTED = {
    "model": ModelConfig,
    "data": DataConfig,
    "split": SplitConfig,
    "training": TrainingConfig,
    "sweep": SweepConfig,
    "synthetic": SyntheticConfig,
}


def _convert(fld, value, dotted):
    name = fld.name
    if name in _NESTED and isinstance(value, dict):
        return _build_dataclass(_NESTED[name], value, dotted)
    if name == "synthetic" and value is None:
        return None
    return value


def config_from_dict(data) -> ExperimentConfig:
    return _build_dataclass(ExperimentConfig, data, "")


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return dataclasses.asdict(cfg)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(data)


def apply_overrides(cfg: ExperimentConfig, assignments) -> ExperimentConfig:
    """Apply `dotted.key=value` overrides; values are parsed as JSON with a
    plain-string fallback."""
    for text in assignments:
        if "=" not in text:
            raise ConfigError(f"override {text!r} must look like key=value")
        dotted, raw = text.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        parts = dotted.strip().split(".")
        target = cfg
        for i, part in enumerate(parts[:-1]):
            if not dataclasses.is_dataclass(target) or not hasattr(target, part):
                raise ConfigError(f"unknown config key: {'.'.join(parts[: i + 1])}")
            nxt = getattr(target, part)
            if nxt is None and part in _NESTED:
                nxt = _NESTED[part]()
                setattr(target, part, nxt)
            target = nxt
        leaf = parts[-1]
        if not dataclasses.is_dataclass(target) or leaf not in {
            f.name for f in dataclasses.fields(target)
        }:
            raise ConfigError(f"unknown config key: {dotted.strip()}")
        if leaf in _NESTED and isinstance(value, dict):
            value = _build_dataclass(_NESTED[leaf], value, dotted.strip())
        setattr(target, leaf, value)
    return cfg


def resolve_data_path(path):
    """Resolve a data path, prefixing a relative path with $FITNET_DATA_ROOT
    when that variable is set."""
    if path is None:
        return None
    p = Path(path)
    root = os.environ.get(DATA_ROOT_ENV)
    if root and not p.is_absolute():
        return Path(root) / p
    return p
