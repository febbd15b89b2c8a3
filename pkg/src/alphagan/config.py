"""Run configuration: four sections addressed by dotted keys (``train.lr_g``)."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .datapipe import AugmentConfig
from .discriminator import DiscriminatorConfig
from .generator import GeneratorConfig
from .losses import EPS


@dataclass
class TrainConfig:
    batch_size: int = 4
    steps: int = 1000
    lr_g: float = 1e-4
    lr_d: float = 1e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    d_steps_per_g: int = 1
    seed: int = 0
    gan_enabled: bool = True
    checkpoint_every: int = 0
    eps: float = EPS
    w_alpha: float = 1.0
    w_comp: float = 1.0
    w_gan: float = 1.0
    saturating: bool = False
    per_patch: bool = False
    fresh_background: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.steps < 0:
            raise ValueError("steps must be >= 0")
        if not (self.lr_g > 0 and self.lr_d > 0):
            raise ValueError("learning rates must be positive")
        if self.d_steps_per_g < 1:
            raise ValueError("d_steps_per_g must be >= 1")
        if not self.eps > 0:
            raise ValueError("eps must be positive")


SECTIONS = {
    "train": TrainConfig,
    "augment": AugmentConfig,
    "generator": GeneratorConfig,
    "discriminator": DiscriminatorConfig,
}


@dataclass
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> RunConfig:
        return cls().override(flatten(data))

    def override(self, dotted: dict) -> RunConfig:
        """Return a copy with ``{"section.key": value}`` entries applied."""
        updates: dict[str, dict] = {name: {} for name in SECTIONS}
        for key, value in dotted.items():
            section, _, name = key.partition(".")
            if section not in SECTIONS or not name:
                raise KeyError(f"unknown config key {key!r}")
            known = {f.name: f for f in fields(SECTIONS[section])}
            if name not in known:
                raise KeyError(f"unknown config key {key!r}")
            updates[section][name] = _coerce(value, getattr(getattr(self, section), name))
        return RunConfig(**{
            name: replace(getattr(self, name), **updates[name]) if updates[name] else getattr(self, name)
            for name in SECTIONS
        })


def _coerce(value, current):
    if isinstance(current, bool):
        if isinstance(value, str):
            if value.lower() not in ("1", "0", "true", "false", "yes", "no"):
                raise ValueError(f"not a boolean: {value!r}")
            return value.lower() in ("1", "true", "yes")
        return bool(value)
    if isinstance(current, int) and not isinstance(current, bool):
        if isinstance(value, float) and not value.is_integer():
            raise ValueError(f"expected an integer, got {value!r}")
        return int(value)
    if isinstance(current, float):
        return float(value)
    return value


def flatten(data: dict, prefix: str = "") -> dict:
    """Nested sections or already-dotted keys -> flat dotted dict."""
    flat = {}
    for key, value in data.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(flatten(value, name + "."))
        else:
            flat[name] = value
    return flat


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the JSON file, then explicit overrides."""
    cfg = RunConfig()
    if path is not None:
        with open(path) as fh:
            cfg = cfg.override(flatten(json.load(fh)))
    if overrides:
        cfg = cfg.override(overrides)
    return cfg


def write_effective_config(cfg_dict: dict, directory) -> Path:
    path = Path(directory) / "effective_config.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(cfg_dict, fh, indent=2, sort_keys=True)
    return path
