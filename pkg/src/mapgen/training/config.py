"""Model and training configuration, profiles and the learning-rate schedule."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace

from ..boxreg import BOX_FRAMES, CAR_PRIORS
from ..pointgen import FUSION, POS_EMB

STAGES = ("seg", "gen", "box")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    n_points: int = 1024
    m_points: int = 1024
    crop: tuple[int, int] = (112, 112)
    seg_point_widths: tuple[int, ...] = (32, 64, 256)
    seg_point_head: tuple[int, ...] = (128,)
    seg_image_widths: tuple[int, int, int] = (16, 32, 64)
    seg_pool_dim: int = 16
    feat_dim: int = 64
    fg_threshold: float = 0.5
    gen_d_model: int = 512
    gen_heads: int = 8
    gen_ff: int = 1024
    gen_layers: int = 4
    gen_pos_dim: int = 128
    pos_emb: str = "mlp"
    fusion: str = "concat"
    asymmetric: bool = True
    generation: bool = True
    box_widths: tuple[int, ...] = (64, 128, 512)
    box_hidden: int = 256
    box_frame: str = "frustum"
    raw_direct: bool = False
    priors: tuple[float, float, float] = CAR_PRIORS

    def validate(self) -> "ModelConfig":
        if self.pos_emb not in POS_EMB:
            raise ConfigError(f"pos_emb must be one of {POS_EMB}, got {self.pos_emb!r}")
        if self.fusion not in FUSION:
            raise ConfigError(f"fusion must be one of {FUSION}, got {self.fusion!r}")
        if self.box_frame not in BOX_FRAMES:
            raise ConfigError(f"box_frame must be one of {BOX_FRAMES}, got {self.box_frame!r}")
        if self.gen_d_model % self.gen_heads:
            raise ConfigError("gen_d_model must be divisible by gen_heads")
        if min(self.n_points, self.m_points, *self.crop) < 1:
            raise ConfigError("point counts and crop size must be positive")
        if len(self.seg_image_widths) != 3:
            raise ConfigError("seg_image_widths needs exactly three stage widths")
        if len(self.crop) != 2:
            raise ConfigError("crop must be (height, width)")
        return self


PROFILES = {
    "large": ModelConfig(),
    "desk": ModelConfig(
        n_points=256, m_points=128, crop=(32, 32),
        gen_d_model=64, gen_heads=4, gen_ff=128, gen_pos_dim=32, box_hidden=128,
    ),
}


@dataclass(frozen=True)
class TrainConfig:
    stage: str = "seg"
    epochs: int = 150
    batch_size: int = 32
    lr: float = 5e-4
    warmup_frac: float = 0.05
    seed: int = 0
    data: str = ""
    split: str = "train"
    min_points: int = 30
    min_fg: int = 5
    mask_ratio: tuple[float, float] = (0.1, 0.5)
    weight_decay: float = 0.0
    keep_states: int = 2
    profile: str = "large"
    model: ModelConfig = field(default_factory=ModelConfig)

    def validate(self) -> "TrainConfig":
        if self.stage not in STAGES:
            raise ConfigError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be at least 1")
        if not 0.0 <= self.warmup_frac < 1.0:
            raise ConfigError("warmup_frac must lie in [0, 1)")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        lo, hi = self.mask_ratio
        if not 0.0 <= lo <= hi < 1.0:
            raise ConfigError("mask_ratio must satisfy 0 <= lo <= hi < 1")
        self.model.validate()
        return self

    def to_dict(self) -> dict:
        return asdict(self)


def _coerce(cls, values: dict):
    known = {f.name: f for f in fields(cls)}
    unknown = set(values) - set(known)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    return {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}


def model_config(profile: str = "large", **overrides) -> ModelConfig:
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    return replace(PROFILES[profile], **_coerce(ModelConfig, overrides)).validate()


def model_config_from_dict(d: dict) -> ModelConfig:
    return ModelConfig(**_coerce(ModelConfig, d)).validate()


def train_config(profile: str = "large", model: dict | None = None, **values) -> TrainConfig:
    mc = model_config(profile, **(model or {}))
    return TrainConfig(profile=profile, model=mc, **_coerce(TrainConfig, values)).validate()


class LrSchedule:
    """Linear warmup from 0 to ``base_lr`` then cosine annealing to 0 at the last step."""

    def __init__(self, total_steps: int, base_lr: float = 5e-4, warmup_frac: float = 0.05):
        if total_steps < 1:
            raise ConfigError("total_steps must be at least 1")
        self.total_steps = total_steps
        self.base_lr = base_lr
        self.warmup_steps = math.ceil(warmup_frac * total_steps)

    def __call__(self, step: int) -> float:
        return self.lr_at(step)

    def lr_at(self, step: int) -> float:
        if not 0 <= step < self.total_steps:
            raise ValueError(f"step {step} outside [0, {self.total_steps})")
        w = self.warmup_steps
        if step < w:
            return self.base_lr * step / w
        span = self.total_steps - 1 - w
        if span <= 0:
            return self.base_lr
        t = (step - w) / span
        return self.base_lr * 0.5 * (1.0 + math.cos(math.pi * t))


def lr_at(step: int, total_steps: int, base_lr: float = 5e-4, warmup_frac: float = 0.05) -> float:
    return LrSchedule(total_steps, base_lr, warmup_frac).lr_at(step)
