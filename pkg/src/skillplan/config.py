"""Planner and training settings plus the flat ``key = value`` config format."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .numerics import ConfigError


@dataclass
class PlannerConfig:
    skill_set_size: int = 20
    code_dim: int = 16
    horizon: int = 8
    plan_len: int = 16
    denoise_steps: int = 50
    beta_start: float = 1e-3
    beta_end: float = 0.3
    guidance_scale: float = 1.2
    cond_dropout: float = 0.25
    ema_decay: float = 0.99
    staleness_threshold: int = 100
    obs_embed_dim: int = 32
    lang_dim: int = 32
    raw_dim: int = 16
    action_dim: int = 4
    cond_dim: int = 32
    predictor_dim: int = 128
    predictor_heads: int = 4
    unet_channels: int = 32
    unet_kernel: int = 5
    unet_groups: int = 8
    time_embed_dim: int = 32
    embed_hidden: int = 64
    invdyn_hidden: int = 128
    encoder_seed: int = 7
    flat: bool = False

    def validate(self) -> None:
        if self.plan_len % 4:
            raise ConfigError(f"plan_len must be divisible by 4, got {self.plan_len}")
        if self.plan_len < 2:
            raise ConfigError("plan_len must be at least 2")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.horizon >= self.plan_len:
            raise ConfigError("horizon must be shorter than plan_len (row 0 is the anchor)")
        if self.denoise_steps < 2:
            raise ConfigError("denoise_steps must be >= 2")
        if not 0.0 < self.beta_start <= self.beta_end < 1.0:
            raise ConfigError("need 0 < beta_start <= beta_end < 1")
        if not 0.0 <= self.cond_dropout <= 1.0:
            raise ConfigError("cond_dropout must lie in [0, 1]")
        if self.guidance_scale < 0:
            raise ConfigError("guidance_scale must be >= 0")
        if not 0.0 < self.ema_decay < 1.0:
            raise ConfigError("ema_decay must lie in (0, 1)")
        if self.predictor_dim % self.predictor_heads:
            raise ConfigError("predictor_dim must be divisible by predictor_heads")
        for ch in (self.unet_channels, 2 * self.unet_channels):
            if ch % self.unet_groups:
                raise ConfigError("unet channel widths must be divisible by unet_groups")
        if self.unet_kernel % 2 == 0:
            raise ConfigError("unet_kernel must be odd")


@dataclass
class TrainConfig:
    loss_weight: float = 0.01
    lr_skill: float = 1e-5
    lr_diffuser: float = 1e-3
    lr_invdyn: float = 1e-3
    batch_size: int = 64
    steps: int = 5000
    skill_update_period: int = 10
    seed: int = 0
    checkpoint_every: int = 500
    episode_len: int = 20
    num_trajectories: int = 600
    noise_scale: float = 0.3
    obs_noise: float = 0.1
    episodes_per_cell: int = 10

    def validate(self) -> None:
        if self.loss_weight < 0:
            raise ConfigError("loss_weight must be >= 0")
        if self.skill_update_period < 1:
            raise ConfigError("skill_update_period must be >= 1")
        if self.batch_size < 1 or self.steps < 0:
            raise ConfigError("batch_size must be >= 1 and steps >= 0")
        if self.episode_len < 1:
            raise ConfigError("episode_len must be >= 1")


@dataclass
class Config:
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def validate(self) -> "Config":
        self.planner.validate()
        self.train.validate()
        return self

    def set(self, key: str, raw: str) -> None:
        for section in (self.planner, self.train):
            fields = {f.name: f for f in dataclasses.fields(section)}
            if key in fields:
                setattr(section, key, _coerce(key, raw, fields[key].type))
                return
        raise ConfigError(f"unknown config key {key!r}")

    def to_text(self) -> str:
        lines = ["# planner"]
        lines += [f"{k} = {_fmt(v)}" for k, v in dataclasses.asdict(self.planner).items()]
        lines.append("# training")
        lines += [f"{k} = {_fmt(v)}" for k, v in dataclasses.asdict(self.train).items()]
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    return repr(v) if isinstance(v, float) else str(v)


def _coerce(key: str, raw: str, typ) -> object:
    typ = typ if isinstance(typ, str) else typ.__name__
    try:
        if typ == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {raw!r}") from exc
    return raw


def parse_config(text: str, base: Config | None = None) -> Config:
    cfg = base if base is not None else Config()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        cfg.set(key, raw)
    return cfg.validate()


def load_config(path: str | Path | None) -> Config:
    if path is None:
        return Config().validate()
    return parse_config(Path(path).read_text())
