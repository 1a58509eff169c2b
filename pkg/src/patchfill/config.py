"""Run configuration: one flat key=value document drives every pipeline stage.

Format (text file):

    # patchfill-config v1
    seed=0
    resolution=64
    ...

Unknown keys are rejected; omitted keys take the documented defaults below.
``parse_config(serialize_config(cfg))`` is the identity.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Dict

from .errors import ConfigError
from .losses import LossWeights
from .networks import GeneratorConfig
import math

CONFIG_HEADER = "# patchfill-config v1"

OPTIMIZERS = ("sgd", "adam", "adamw")


@dataclass
class TrainConfig:
    """Optimizer and loop settings for one training stage."""

    optimizer: str = "adamw"
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.01
    batch_size: int = 8
    steps: int = 2000
    seed: int = 0
    same_id_fraction: float = 0.5

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if not 0.0 <= self.same_id_fraction <= 1.0:
            raise ConfigError(f"same_id_fraction must lie in [0,1], got {self.same_id_fraction}")
        if self.batch_size < 1 or self.steps < 0:
            raise ConfigError("batch_size must be >= 1 and steps >= 0")


@dataclass
class RunConfig:
    """Every knob of the pipeline in one flat namespace."""

    seed: int = 0
    resolution: int = 64

    # generator / encoder
    style_dim: int = 128
    base_channels: int = 64
    max_channels: int = 256
    identity_dim: int = 128

    # face-embedding surrogate
    fr_base_channels: int = 32
    fr_steps: int = 600
    fr_batch_size: int = 32

    # optimization (shared by all stages; steps are per stage)
    optimizer: str = "adamw"
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 0.01
    batch_size: int = 8
    stage1_steps: int = 2000
    stage2_steps: int = 800
    same_id_fraction: float = 0.5

    # patch-rect sampling, as fractions of the proportional size bound
    rect_min_scale: float = 0.5
    rect_max_scale: float = 1.0

    # loss weights
    lambda_adv: float = 1.0
    lambda_rec: float = 1.0
    lambda_lpips: float = 1.0
    lambda_dis: float = 1.0
    lambda_bv: float = 0.01
    gp_coeff: float = 10.0
    r1_coeff: float = 10.0
    discount_alpha: float = 0.15

    # auxiliary networks
    refiner_base_channels: int = 32
    critic_base_channels: int = 32
    perceptual_seed: int = 0

    # evaluation
    k_folds: int = 10

    def __post_init__(self):
        if self.resolution < 8 or self.resolution & (self.resolution - 1):
            raise ConfigError(f"resolution must be a power of two >= 8, got {self.resolution}")
        if not 0.0 < self.rect_min_scale <= self.rect_max_scale <= 1.0:
            raise ConfigError("need 0 < rect_min_scale <= rect_max_scale <= 1")
        if self.discount_alpha <= 0:
            raise ConfigError(f"discount_alpha must be > 0, got {self.discount_alpha}")

    # ------------------------- derived views -------------------------

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(
            output_resolution=self.resolution,
            num_blocks=int(math.log2(self.resolution)) - 1,
            style_dim=self.style_dim,
            base_channels=self.base_channels,
            max_channels=self.max_channels,
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            lambda_adv=self.lambda_adv, lambda_rec=self.lambda_rec,
            lambda_lpips=self.lambda_lpips, lambda_dis=self.lambda_dis,
            lambda_bv=self.lambda_bv, gp_coeff=self.gp_coeff, r1_coeff=self.r1_coeff,
        )

    def train_config(self, steps: int) -> TrainConfig:
        return TrainConfig(
            optimizer=self.optimizer, lr=self.lr, beta1=self.beta1, beta2=self.beta2,
            weight_decay=self.weight_decay, batch_size=self.batch_size, steps=steps,
            seed=self.seed, same_id_fraction=self.same_id_fraction,
        )

    def to_dict(self) -> Dict:
        return dataclasses.asdict(self)


def _coerce(name: str, kind, raw: str):
    try:
        if kind is bool:
            if raw not in ("true", "false"):
                raise ValueError(raw)
            return raw == "true"
        return kind(raw)
    except ValueError as exc:
        raise ConfigError(f"config key {name}: cannot parse {raw!r} as {kind.__name__}") from exc


def parse_config(text: str) -> RunConfig:
    """Parse the flat key=value document (see module docstring)."""
    lines = text.splitlines()
    if not lines or lines[0].strip() != CONFIG_HEADER:
        raise ConfigError(f"config must start with {CONFIG_HEADER!r}")
    known = {f.name: f.type for f in fields(RunConfig)}
    types = {"int": int, "float": float, "str": str, "bool": bool}
    values = {}
    for lineno, line in enumerate(lines[1:], start=2):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate config key {key!r}")
        kind = known[key]
        kind = types[kind] if isinstance(kind, str) else kind
        values[key] = _coerce(key, kind, raw)
    return RunConfig(**values)


def parse_config_file(path) -> RunConfig:
    return parse_config(Path(path).read_text())


def serialize_config(cfg: RunConfig) -> str:
    lines = [CONFIG_HEADER]
    for f in fields(RunConfig):
        value = getattr(cfg, f.name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{f.name}={value}")
    return "\n".join(lines) + "\n"


def write_config(cfg: RunConfig, path) -> None:
    Path(path).write_text(serialize_config(cfg))
