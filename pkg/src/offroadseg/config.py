"""Layered run configuration: defaults, then a YAML file, then key=value overrides."""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .augment import GeometricConfig, PhotometricConfig
from .model import ModelConfig
from .optim import OptimConfig, ScheduleConfig
from .taxonomy import DEFAULT_PALETTE, LabelMapping, default_mapping_path, load_mapping

BUILTIN_MAPPING = "builtin:goose_v1"


class ConfigError(ValueError):
    """Unknown key, type mismatch, or invariant violation; names the key."""


@dataclass(frozen=True)
class DataConfig:
    train_roots: tuple[str, ...] = ()
    val_roots: tuple[str, ...] = ()
    # None = labels are already challenge ids; BUILTIN_MAPPING or a csv path otherwise
    mapping_file: str | None = None


@dataclass(frozen=True)
class EmaConfig:
    decay: float = 0.999

    def __post_init__(self):
        if not 0.0 < self.decay < 1.0:
            raise ValueError(f"decay must satisfy 0 < decay < 1, got {self.decay}")


@dataclass(frozen=True)
class AugmentConfig:
    photometric: PhotometricConfig = field(default_factory=PhotometricConfig)
    geometric: GeometricConfig = field(default_factory=GeometricConfig)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 2
    grad_accum_steps: int = 4
    eval_interval: int = 1000
    checkpoint_interval: int = 1000
    seed: int = 0
    output_dir: str = "runs/default"
    mixed_precision: bool = False

    def __post_init__(self):
        for name in ("batch_size", "grad_accum_steps", "eval_interval", "checkpoint_interval"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")


@dataclass(frozen=True)
class PipelineConfig:
    data: DataConfig = field(default_factory=DataConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    ema: EmaConfig = field(default_factory=EmaConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    palette: tuple[tuple[int, int, int], ...] = DEFAULT_PALETTE

    def __post_init__(self):
        if len(self.palette) != self.model.num_classes:
            raise ValueError(f"palette must list {self.model.num_classes} colors, got {len(self.palette)}")
        for color in self.palette:
            if len(color) != 3 or any(not 0 <= int(c) <= 255 for c in color):
                raise ValueError(f"palette colors must be RGB triples in 0..255, got {color!r}")

    @property
    def effective_batch(self) -> int:
        return self.train.batch_size * self.train.grad_accum_steps


def default_config() -> PipelineConfig:
    return PipelineConfig()


def _plain(value):
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return {f.name: _plain(getattr(value, f.name)) for f in dataclasses.fields(value)}
    if isinstance(value, (tuple, list)):
        return [_plain(v) for v in value]
    return value


def config_to_dict(cfg: PipelineConfig) -> dict:
    """Nested dict of plain YAML/JSON-friendly values."""
    return _plain(cfg)


def _tuplify(value):
    if isinstance(value, (list, tuple)):
        return tuple(_tuplify(v) for v in value)
    return value


def _build(cls, tree: dict, path: str):
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in tree.items():
        full = f"{path}.{key}" if path else key
        if key not in known:
            raise ConfigError(f"unknown config key {full!r}")
        sub = _SECTIONS.get((cls, key))
        if sub is not None:
            if value is None:
                value = {}
            if not isinstance(value, dict):
                raise ConfigError(f"{full!r} must be a mapping, got {type(value).__name__}")
            kwargs[key] = _build(sub, value, full)
        else:
            kwargs[key] = _tuplify(value)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid value under {path or 'config'!r}: {exc}") from exc


_SECTIONS = {
    (PipelineConfig, "data"): DataConfig,
    (PipelineConfig, "augment"): AugmentConfig,
    (PipelineConfig, "model"): ModelConfig,
    (PipelineConfig, "optim"): OptimConfig,
    (PipelineConfig, "schedule"): ScheduleConfig,
    (PipelineConfig, "ema"): EmaConfig,
    (PipelineConfig, "train"): TrainConfig,
    (AugmentConfig, "photometric"): PhotometricConfig,
    (AugmentConfig, "geometric"): GeometricConfig,
}


def config_from_dict(tree: dict) -> PipelineConfig:
    if not isinstance(tree, dict):
        raise ConfigError(f"config root must be a mapping, got {type(tree).__name__}")
    return _build(PipelineConfig, tree, "")


def _deep_merge(base: dict, extra: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        full = f"{path}.{key}" if path else key
        if key not in out:
            raise ConfigError(f"unknown config key {full!r}")
        if isinstance(out[key], dict) and isinstance(value, dict):
            out[key] = _deep_merge(out[key], value, full)
        else:
            out[key] = value
    return out


def _apply_override(tree: dict, item: str) -> None:
    key, sep, raw = item.partition("=")
    if not sep or not key:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    node = tree
    parts = key.split(".")
    for part in parts[:-1]:
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"unknown config key {key!r}")
        node = node[part]
        if node is None:
            raise ConfigError(f"unknown config key {key!r}")
    leaf = parts[-1]
    if not isinstance(node, dict) or leaf not in node:
        raise ConfigError(f"unknown config key {key!r}")
    try:
        node[leaf] = yaml.safe_load(raw) if raw else None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse value for {key!r}: {exc}") from exc


def parse_config(path: str | Path | None = None, overrides: tuple[str, ...] | list[str] = ()) -> PipelineConfig:
    """Resolve defaults <- file <- overrides and validate the result."""
    tree = config_to_dict(default_config())
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            loaded = yaml.safe_load(path.read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML: {exc}") from exc
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError(f"{path}: config root must be a mapping")
        tree = _deep_merge(tree, loaded)
    for item in overrides:
        _apply_override(tree, item)
    return config_from_dict(tree)


def resolve_mapping(cfg: DataConfig) -> LabelMapping | None:
    """None = labels used as-is; otherwise the configured remap table."""
    if cfg.mapping_file is None:
        return None
    if cfg.mapping_file == BUILTIN_MAPPING:
        return load_mapping(default_mapping_path())
    return load_mapping(cfg.mapping_file)
