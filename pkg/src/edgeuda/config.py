"""Run configuration: every tunable of the training stack in one place,
with JSON loading, named-flag overrides, validation that mirrors each
module's preconditions, and a canonical echo for reproducibility.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

from .data import SceneSpec
from .model import ModelConfig


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


@dataclass
class RunConfig:
    # Edge extraction
    sigma: float = 1.0
    low: float = 0.1
    high: float = 0.2
    # Objective
    lam: float = 1.0
    threshold: float = 0.9
    # Optimization
    lr: float = 0.01
    momentum: float = 0.9
    steps: int = 500
    seed: int = 0
    # Data
    image_size: int = 64
    num_classes: int = 5
    color_shift: tuple = (0.25, -0.2, 0.15)
    noise_amp: float = 0.08
    texture_freq: float = 6.0
    source_dir: str | None = None
    target_dir: str | None = None
    # Model
    base_channels: int = 16
    encoder_depth: int = 3
    enable_edge_aux: bool = True
    enable_cm: bool = True
    # Harness
    eval_every: int = 100
    eval_scenes: int = 16
    eval_seed: int = 777
    checkpoint_every: int = 0
    out_dir: str = "run"

    def model_config(self):
        return ModelConfig(
            num_classes=self.num_classes,
            base_channels=self.base_channels,
            encoder_depth=self.encoder_depth,
            sigma=self.sigma,
            low=self.low,
            high=self.high,
            lam=self.lam,
            enable_edge_aux=self.enable_edge_aux,
            enable_cm=self.enable_cm,
        )

    def source_scene_spec(self):
        return SceneSpec(size=self.image_size, num_classes=self.num_classes, domain="source")

    def target_scene_spec(self):
        return SceneSpec(
            size=self.image_size,
            num_classes=self.num_classes,
            domain="target",
            color_shift=tuple(self.color_shift),
            noise_amp=self.noise_amp,
            texture_freq=self.texture_freq,
        )

    def validate(self):
        def fail(name, message):
            raise ConfigError(f"field '{name}': {message}")

        try:
            self.model_config().validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        try:
            self.target_scene_spec().validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if not 0.0 <= self.threshold <= 1.0:
            fail("threshold", f"must be in [0, 1], got {self.threshold}")
        if self.lr <= 0:
            fail("lr", f"must be positive, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            fail("momentum", f"must be in [0, 1), got {self.momentum}")
        if self.steps < 0:
            fail("steps", f"must be >= 0, got {self.steps}")
        if self.lam < 0:
            fail("lam", f"must be >= 0, got {self.lam}")
        if self.image_size % (2 ** self.encoder_depth) != 0:
            fail("image_size", f"{self.image_size} not divisible by 2^encoder_depth={2 ** self.encoder_depth}")
        if self.eval_scenes < 1:
            fail("eval_scenes", f"must be >= 1, got {self.eval_scenes}")
        if self.eval_every < 0:
            fail("eval_every", f"must be >= 0, got {self.eval_every}")
        if self.checkpoint_every < 0:
            fail("checkpoint_every", f"must be >= 0, got {self.checkpoint_every}")

    def to_dict(self):
        d = asdict(self)
        d["color_shift"] = list(self.color_shift)
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]

    @classmethod
    def from_dict(cls, values):
        known = set(cls.field_names())
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown field(s): {sorted(unknown)}")
        cfg = cls(**values)
        if cfg.color_shift is not None:
            cfg.color_shift = tuple(float(v) for v in cfg.color_shift)
        return cfg

    @classmethod
    def load(cls, path=None, overrides=None):
        """Defaults, then the JSON file, then explicit overrides."""
        values = {}
        if path is not None:
            with open(path, "r", encoding="utf-8") as fh:
                try:
                    loaded = json.load(fh)
                except json.JSONDecodeError as exc:
                    raise ConfigError(f"{path}: invalid JSON: {exc}") from None
            if not isinstance(loaded, dict):
                raise ConfigError(f"{path}: config must be a JSON object")
            values.update(loaded)
        if overrides:
            values.update(overrides)
        return cls.from_dict(values)
