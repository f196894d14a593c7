"""Run configuration: presets, YAML files and dotted-key overrides.

A config file is a YAML mapping. ``scale`` selects the preset the file is
layered on (``paper`` or ``desk``); every other key must name an existing
field, nested with mappings (or dotted keys on the command line)::

    scale: desk
    lr: 0.002
    pcnet:
      iterations: 3
      backbone: {name: tiny_test}

``input_size`` and ``loss.mu`` are authoritative; ``pcnet.input_size`` and
``pcnet.mu`` mirror them.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import yaml

from .losses import LossConfig
from .model import BackboneSpec, PCNetConfig


class ConfigError(ValueError):
    """Invalid configuration key or value."""


@dataclass
class TrainConfig:
    scale: str = "paper"
    optimizer: str = "adamw"
    lr: float = 1e-4
    lr_decay: float = 0.1
    decay_epochs: tuple = (100,)
    weight_decay: float = 1e-2
    batch_size: int = 8
    epochs: int = 150
    max_steps: Optional[int] = None  # overrides epochs when set
    input_size: int = 704
    seed: int = 0
    augmentation: str = "flip"
    deterministic: bool = False
    workers: int = 0
    eval_every: int = 1  # epochs between best-checkpoint evaluations; 0 disables
    eval_split: Optional[str] = "test"
    ablation_resolutions: tuple = (352, 384, 704)
    pcnet: PCNetConfig = field(default_factory=PCNetConfig)
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if isinstance(self.pcnet, dict):
            self.pcnet = PCNetConfig.from_dict(self.pcnet)
        if isinstance(self.loss, dict):
            self.loss = LossConfig(**self.loss)
        self.decay_epochs = tuple(int(e) for e in self.decay_epochs)
        self.ablation_resolutions = tuple(int(r) for r in self.ablation_resolutions)
        checks = [
            (self.scale in ("paper", "desk"), f"scale must be paper or desk, got {self.scale!r}"),
            (self.optimizer == "adamw", f"unsupported optimizer {self.optimizer!r}"),
            (self.lr > 0, "lr must be positive"),
            (0 < self.lr_decay <= 1, "lr_decay must be in (0, 1]"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.epochs >= 1, "epochs must be >= 1"),
            (self.max_steps is None or self.max_steps >= 1, "max_steps must be >= 1"),
            (self.input_size >= 32 and self.input_size % 32 == 0, "input_size must be a positive multiple of 32"),
            (self.augmentation in ("flip", "none"), f"augmentation must be flip or none, got {self.augmentation!r}"),
            (self.workers >= 0, "workers must be >= 0"),
            (all(r % 32 == 0 and r > 0 for r in self.ablation_resolutions), "ablation resolutions must be multiples of 32"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)
        self.pcnet.input_size = self.input_size
        self.pcnet.mu = self.loss.mu

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        """Short stable hash of the full configuration."""
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


def paper_config() -> TrainConfig:
    return TrainConfig()


def desk_config() -> TrainConfig:
    return TrainConfig(
        scale="desk",
        lr=2e-3,
        lr_decay=1.0,
        decay_epochs=(),
        weight_decay=0.0,
        batch_size=8,
        epochs=5,
        max_steps=500,
        input_size=64,
        augmentation="none",
        deterministic=True,
        eval_every=0,
        eval_split=None,
        ablation_resolutions=(32, 64),
        pcnet=PCNetConfig(backbone=BackboneSpec.tiny(), decoder_channels=32, input_size=64),
    )


PRESETS = {"paper": paper_config, "desk": desk_config}


def _merge(base: dict, update: dict, path: str = "") -> dict:
    out = dict(base)
    for key, value in update.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} expects a mapping")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = value
    return out


def parse_override(item: str) -> dict:
    """``a.b.c=value`` -> {"a": {"b": {"c": value}}}, value parsed as YAML."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not key=value")
    key, raw = item.split("=", 1)
    parts = key.strip().split(".")
    if not all(parts):
        raise ConfigError(f"bad override key {key!r}")
    value = yaml.safe_load(raw) if raw.strip() else None
    nested: dict = {parts[-1]: value}
    for p in reversed(parts[:-1]):
        nested = {p: nested}
    return nested


def build_config(path=None, overrides: Sequence[str] = (), scale: Optional[str] = None) -> TrainConfig:
    doc: dict = {}
    if path is not None:
        try:
            doc = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    layers = [doc] + [parse_override(o) for o in overrides]
    chosen = scale
    for layer in layers:
        chosen = layer.get("scale", chosen)
    if chosen is None:
        chosen = "paper"
    if chosen not in PRESETS:
        raise ConfigError(f"unknown scale {chosen!r}")
    merged = PRESETS[chosen]().to_dict()
    for layer in layers:
        merged = _merge(merged, layer)
    return config_from_dict(merged)


def config_from_dict(d: dict) -> TrainConfig:
    try:
        return TrainConfig(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def dump_config(cfg: TrainConfig, path) -> Path:
    path = Path(path)
    d = json.loads(json.dumps(cfg.to_dict(), default=list))
    path.write_text(yaml.safe_dump(d, sort_keys=False))
    return path
