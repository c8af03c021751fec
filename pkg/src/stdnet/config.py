"""Configuration dataclasses and their JSON round-trip.

A config file is one JSON object with optional ``model``, ``loss``, ``train``
and ``data`` sections. Keys mirror the dataclass fields below; unknown keys
are rejected so typos fail loudly.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

SCALES = (4, 8, 16)


@dataclass
class ModelConfig:
    scale: int = 4
    channels: int = 32
    filter_size: int = 3
    filter_groups: int = 1
    deform_kernel: int = 3
    deform_groups: int = 1
    max_offset: float = 10.0
    neighbors: int = 2
    depth_layers: int = 3
    rgb_layers: int = 3
    fuse_blocks: int = 1
    recon_channels: int | None = None
    recurrent: bool = False
    tie_directions: bool = False
    depth_scale_cm: float = 100.0
    depth_norm: str = "fixed"
    seed: int = 0

    def __post_init__(self):
        if self.scale not in SCALES:
            raise ValueError(f"scale must be one of {SCALES}, got {self.scale}")
        if self.neighbors not in (1, 2):
            raise ValueError(f"neighbors must be 1 or 2, got {self.neighbors}")
        for name in ("channels", "depth_layers", "rgb_layers", "filter_groups", "deform_groups"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.fuse_blocks < 0:
            raise ValueError("fuse_blocks must be >= 0")
        for name in ("filter_size", "deform_kernel"):
            k = getattr(self, name)
            if k < 1 or k % 2 == 0:
                raise ValueError(f"{name} must be a positive odd integer, got {k}")
        if self.channels % self.filter_groups or self.channels % self.deform_groups:
            raise ValueError("filter_groups and deform_groups must divide channels")
        if self.depth_norm not in ("fixed", "clip"):
            raise ValueError(f"depth_norm must be 'fixed' or 'clip', got {self.depth_norm!r}")
        if self.max_offset <= 0 or self.depth_scale_cm <= 0:
            raise ValueError("max_offset and depth_scale_cm must be positive")


@dataclass
class LossConfig:
    alpha_sd: float = 0.5
    alpha_td: float = 0.5
    beta: float = 0.01
    eps: float = 1e-12
    use_sd: bool = True
    use_td: bool = True
    reduction: str = "mean"

    def __post_init__(self):
        for name in ("alpha_sd", "alpha_td", "beta", "eps"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.reduction not in ("mean", "sum"):
            raise ValueError(f"reduction must be 'mean' or 'sum', got {self.reduction!r}")


@dataclass
class TrainConfig:
    lr: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    hr_crop: int = 256
    frames: int = 8
    batch_size: int = 1
    steps: int = 1000
    checkpoint_every: int = 500
    log_every: int = 1
    seed: int = 0
    augment: float = 0.0
    cutmix: float = 0.0
    lr_schedule: str = "constant"
    lr_floor: float = 0.01
    warmup: int = 0
    grad_clip: float = 0.0
    out_dir: str = "runs/stdnet"
    resume: str | None = None

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.frames < 3:
            raise ValueError(f"training clips need at least 3 frames, got {self.frames}")
        if self.batch_size < 1 or self.steps < 0 or self.warmup < 0 or self.grad_clip < 0:
            raise ValueError("batch_size must be >= 1; steps, warmup and grad_clip >= 0")
        for name in ("augment", "cutmix"):
            if not 0.0 <= float(getattr(self, name)) <= 1.0:
                raise ValueError(f"{name} is a probability, got {getattr(self, name)}")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ValueError(f"lr_schedule must be 'constant' or 'cosine', got {self.lr_schedule!r}")

    def lr_at(self, step: int) -> float:
        """Learning rate for 0-based ``step``.

        A linear ramp over the first ``warmup`` steps multiplies the schedule;
        cosine decays to ``lr * lr_floor`` at ``steps``.
        """
        ramp = min((step + 1) / self.warmup, 1.0) if self.warmup else 1.0
        if self.lr_schedule == "constant" or self.steps == 0:
            return self.lr * ramp
        frac = min(step / self.steps, 1.0)
        return ramp * self.lr * (self.lr_floor + (1 - self.lr_floor) * 0.5 * (1 + math.cos(math.pi * frac)))

    def check_scale(self, scale: int):
        if self.hr_crop % scale:
            raise ValueError(f"hr_crop ({self.hr_crop}) must be divisible by scale ({scale})")


@dataclass
class DataConfig:
    """Training data: clip directories and/or on-the-fly synthetic clips."""

    clips: list[str] = field(default_factory=list)
    root: str | None = None
    synthetic: dict | None = None


@dataclass
class Config:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def __post_init__(self):
        self.train.check_scale(self.model.scale)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "Config":
        sections = {"model": ModelConfig, "loss": LossConfig, "train": TrainConfig, "data": DataConfig}
        unknown = set(raw) - set(sections)
        if unknown:
            raise ValueError(f"unknown config sections: {sorted(unknown)}")
        return cls(**{name: _build(kind, raw.get(name, {})) for name, kind in sections.items()})


def _build(kind, values: dict):
    names = {f.name for f in dataclasses.fields(kind)}
    unknown = set(values) - names
    if unknown:
        raise ValueError(f"unknown {kind.__name__} keys: {sorted(unknown)}")
    return kind(**values)


def load_config(path) -> Config:
    with open(path) as fh:
        return Config.from_dict(json.load(fh))


def save_config(cfg: Config, path):
    Path(path).write_text(json.dumps(cfg.to_dict(), indent=2))
