"""Configuration: every tunable with its default, parsed from ``key=value`` text."""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from pathlib import Path


class ConfigError(ValueError):
    pass


def _positive(name, v):
    if v <= 0:
        raise ConfigError(f"{name} must be > 0, got {v}")


def _nonneg(name, v):
    if v < 0:
        raise ConfigError(f"{name} must be >= 0, got {v}")


@dataclass
class Config:
    # world
    max_dim: int = 1024
    shell_thickness: int = 4
    # vertex features
    feature_dim: int = 64
    n_encoded: int = 24
    feature_init_scale: float = 0.1
    # neural field
    n_freq: int = 4
    sky_freq: int = 4
    hidden: int = 32
    field_trunk_layers: int = 2
    field_mod_layers: int = 2
    c_dim: int = 8
    z_dim: int = 16
    w_dim: int = 32
    label_dim: int = 8
    demod_eps: float = 1e-8
    leaky_slope: float = 0.2
    # refiner
    refiner_channels: int = 16
    refiner_kernels: tuple[int, ...] = (3, 3, 3, 3)
    use_refiner: bool = True
    # rendering
    samples_train: int = 24
    samples_eval: int = 32
    d_max: float = 3.0
    feature_clip: float = 1.0
    fov_deg: float = 60.0
    # losses
    w_l2: float = 10.0
    w_l1: float = 1.0
    w_opacity: float = 0.5
    w_gan: float = 0.0
    w_perceptual: float = 0.0
    w_kl: float = 0.0
    # optimizer
    lr_generator: float = 1e-4
    lr_features: float = 5e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    # camera sampling
    min_mean_depth: float = 2.0
    min_entropy: float = 0.75
    camera_retries: int = 100
    camera_height_min: float = 1.5
    camera_height_max: float = 3.0
    # oracle target
    oracle_ambient: float = 0.45
    oracle_diffuse: float = 0.55
    oracle_light: tuple[float, ...] = (0.3, 1.0, 0.5)
    # training
    train_res: int = 32
    iterations: int = 2000
    checkpoint_every: int = 500
    seed: int = 0
    style_seed: int = 0
    threads: int = 1

    def validate(self) -> "Config":
        for name in ("max_dim", "shell_thickness", "hidden", "c_dim", "z_dim", "w_dim",
                     "label_dim", "refiner_channels", "samples_train", "samples_eval",
                     "camera_retries", "train_res", "threads", "checkpoint_every"):
            _positive(name, getattr(self, name))
        for name in ("d_max", "feature_clip", "fov_deg", "feature_init_scale", "demod_eps",
                     "lr_generator", "lr_features", "adam_eps"):
            _positive(name, getattr(self, name))
        for name in ("n_freq", "sky_freq", "n_encoded", "iterations", "field_trunk_layers",
                     "field_mod_layers", "w_l2", "w_l1", "w_opacity", "w_gan", "w_perceptual",
                     "w_kl", "min_mean_depth", "min_entropy", "oracle_ambient",
                     "oracle_diffuse", "leaky_slope"):
            _nonneg(name, getattr(self, name))
        if self.feature_dim < 2:
            raise ConfigError(f"feature_dim must be >= 2, got {self.feature_dim}")
        if self.n_encoded > self.feature_dim:
            raise ConfigError(f"n_encoded ({self.n_encoded}) exceeds feature_dim ({self.feature_dim})")
        if self.field_mod_layers < 1:
            raise ConfigError("field_mod_layers must be >= 1")
        if not self.fov_deg < 180:
            raise ConfigError(f"fov_deg must be < 180, got {self.fov_deg}")
        for name in ("adam_beta1", "adam_beta2"):
            if not 0 <= getattr(self, name) < 1:
                raise ConfigError(f"{name} must be in [0, 1)")
        if not 0 < self.camera_height_min <= self.camera_height_max:
            raise ConfigError("camera_height_min must be in (0, camera_height_max]")
        if not self.refiner_kernels or any(k < 1 or k % 2 == 0 for k in self.refiner_kernels):
            raise ConfigError("refiner_kernels must be odd positive sizes")
        if self.use_refiner is False and self.c_dim < 3:
            raise ConfigError("c_dim must be >= 3 when the refiner is bypassed")
        if len(self.oracle_light) != 3 or not any(self.oracle_light):
            raise ConfigError("oracle_light must be a nonzero 3-vector")
        return self

    @property
    def receptive_field(self) -> int:
        return 1 + sum(k - 1 for k in self.refiner_kernels)

    def replace(self, **changes) -> "Config":
        return dataclasses.replace(self, **changes).validate()

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            elif isinstance(v, bool):
                v = "true" if v else "false"
            lines.append(f"{f.name}={v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Config":
        return cls.from_pairs(_parse_pairs(text))

    @classmethod
    def from_pairs(cls, pairs: dict[str, str]) -> "Config":
        types = {f.name: f for f in fields(cls)}
        base = cls()
        values = {}
        for key, raw in pairs.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = _coerce(key, raw, getattr(base, key))
        return dataclasses.replace(base, **values).validate()

    @classmethod
    def load(cls, path: str | Path | None = None, overrides: dict[str, str] | None = None) -> "Config":
        pairs = _parse_pairs(Path(path).read_text()) if path else {}
        pairs.update(overrides or {})
        cfg = cls.from_pairs(pairs)
        env = os.environ.get("VOXELFIELD_THREADS")
        if env:
            cfg = cfg.replace(threads=_coerce("threads", env, 1))
        return cfg


def _parse_pairs(text: str) -> dict[str, str]:
    pairs = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


def _coerce(key: str, raw: str, default):
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            conv = type(default[0]) if default else float
            return tuple(conv(x) for x in raw.split(","))
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw
