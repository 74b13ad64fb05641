"""Flat key=value run configuration.

One file drives a whole run: model, loss and trainer settings plus the seed.
Lines are `key=value`, `#` starts a comment, unknown keys are rejected.
Command-line overrides use the same `key=value` form. Every run writes its
fully resolved configuration next to its outputs so the run directory is
self-describing.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .losses import LossConfig
from .model import ModelConfig
from .trainer import TrainConfig


@dataclass
class RunConfig:
    seed: int = 0
    # model
    in_channels: int = 1
    base_channels: int = 16
    num_classes: int = 2
    dropout_p: float = 0.5
    tap_layer: str = "dec2"
    # loss
    beta: float = 0.001
    eps_u: float = 1e-6
    eps_f: float = 1e-6
    ramp_len: int = 800
    omega_max: float = 0.1
    dice_smooth: float = 1e-5
    # training
    total_steps: int = 2000
    batch_size: int = 4
    labeled_per_batch: int = 2
    lr0: float = 0.01
    lr_period: int = 800
    ema_alpha: float = 0.99
    mc_passes: int = 16
    mode: str = "paper"
    noise_sigma: float = 0.1
    noise_clip: float = 0.2
    student_dropout: bool = True
    normalize_entropy: bool = True

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            in_channels=self.in_channels,
            base_channels=self.base_channels,
            num_classes=self.num_classes,
            dropout_p=self.dropout_p,
            tap_layer=self.tap_layer,
        )

    def loss_config(self) -> LossConfig:
        return LossConfig(
            beta=self.beta,
            eps_u=self.eps_u,
            eps_f=self.eps_f,
            ramp_len=self.ramp_len,
            omega_max=self.omega_max,
            dice_smooth=self.dice_smooth,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            total_steps=self.total_steps,
            batch_size=self.batch_size,
            labeled_per_batch=self.labeled_per_batch,
            lr0=self.lr0,
            lr_period=self.lr_period,
            ema_alpha=self.ema_alpha,
            mc_passes=self.mc_passes,
            seed=self.seed,
            mode=self.mode,
            noise_sigma=self.noise_sigma,
            noise_clip=self.noise_clip,
            student_dropout=self.student_dropout,
            normalize_entropy=self.normalize_entropy,
        )

    def validate(self) -> None:
        try:
            self.model_config().validate()
            self.loss_config().validate()
            self.train_config().validate()
        except (ValueError, ConfigError) as e:
            raise ConfigError(str(e)) from e


_FIELDS = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _parse_value(key: str, raw: str):
    kind = _FIELDS[key]
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "1", "yes"):
                return True
            if low in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        return raw
    except ValueError as e:
        raise ConfigError(f"bad value for {key}: {e}") from e


def apply_assignment(cfg: RunConfig, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigError(f"expected key=value, got {assignment!r}")
    key, _, raw = assignment.partition("=")
    key = key.strip()
    if key not in _FIELDS:
        raise ConfigError(f"unknown config key {key!r}")
    setattr(cfg, key, _parse_value(key, raw))


def load_run_config(path=None, overrides: list[str] | None = None) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            try:
                apply_assignment(cfg, stripped)
            except ConfigError as e:
                raise ConfigError(f"{p}:{lineno}: {e}") from e
    for ov in overrides or []:
        apply_assignment(cfg, ov)
    return cfg


def resolved_text(cfg: RunConfig) -> str:
    lines = [f"{f.name}={_format_value(getattr(cfg, f.name))}"
             for f in dataclasses.fields(RunConfig)]
    return "\n".join(lines) + "\n"


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)
