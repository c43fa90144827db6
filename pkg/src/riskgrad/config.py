"""Training configuration and its YAML file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .envs import PRESETS, EnvConfig
from .errors import ConfigError


@dataclass
class TrainConfig:
    env: EnvConfig = field(default_factory=lambda: PRESETS["cliff"]())
    hidden: list[int] = field(default_factory=lambda: [64, 64])
    n_envs: int = 16
    steps: int = 256
    epochs: int = 4
    minibatch: int = 512
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    lr: float = 1e-3
    entropy_coef: float = 0.005
    eta: float = 0.5
    n_fractions: int = 64
    kappa: float = 1.0
    iterations: int = 300
    seed: int = 0
    cvar_samples: int = 32
    normalize_advantages: bool = True
    max_grad_norm: float = 1.0
    value_scale: float = 1.0
    init_log_std: float = -0.5

    def __post_init__(self):
        if isinstance(self.env, dict):
            self.env = env_from_dict(self.env)
        self.hidden = [int(h) for h in self.hidden]
        positive = ("n_envs", "steps", "epochs", "minibatch", "lr", "clip", "n_fractions", "kappa", "cvar_samples")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.hidden or min(self.hidden) < 1:
            raise ConfigError("hidden sizes must be positive")
        if self.iterations < 0:
            raise ConfigError("iterations must be >= 0")
        if not 0.0 < self.eta <= 1.0:
            raise ConfigError(f"eta must lie in (0, 1], got {self.eta}")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in [0, 1), got {self.gamma}")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lam must lie in [0, 1], got {self.lam}")
        if self.entropy_coef < 0:
            raise ConfigError("entropy_coef must be >= 0")

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        d["env"] = self.env.to_dict()
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**d)


def env_from_dict(d: dict) -> EnvConfig:
    """Start from the named preset and apply the given overrides."""
    d = dict(d)
    name = d.get("env", "cliff")
    if name not in PRESETS:
        if name == "finite":
            raise ConfigError("the finite environment cannot be loaded from a file")
        raise ConfigError(f"unknown environment {name!r}")
    preset = PRESETS[name]()
    merged = preset.to_dict()
    for key, value in d.items():
        if key in ("weights", "params") and isinstance(value, dict):
            merged[key] = {**merged[key], **value}
        else:
            merged[key] = value
    return EnvConfig.from_dict(merged)


def load_config(path: str | Path | None, **overrides) -> TrainConfig:
    """Read a YAML config; missing keys fall back to defaults. ``None`` overrides are ignored."""
    data: dict = {}
    if path is not None:
        p = Path(path)
        try:
            data = yaml.safe_load(p.read_text()) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed config {p}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {p} must be a mapping")
    env_override = overrides.pop("env_name", None)
    if env_override is not None:
        env_part = data.get("env", {}) if isinstance(data.get("env"), dict) else {}
        if env_part.get("env") not in (None, env_override):
            env_part = {}
        data["env"] = {**env_part, "env": env_override}
    for key, value in overrides.items():
        if value is not None:
            data[key] = value
    if "seed" in data and isinstance(data.get("env"), dict):
        data["env"].setdefault("seed", data["seed"])
    return TrainConfig.from_dict(data)


def dump_config(cfg: TrainConfig) -> str:
    return yaml.safe_dump(_plain(cfg.to_dict()), sort_keys=False)


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if hasattr(obj, "item"):
        return obj.item()
    return obj
