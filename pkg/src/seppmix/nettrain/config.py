from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Tuple

from ..errors import ConfigError
from ..mixkit import MIXERS
from .models import DESK_CHANNELS

CAM_REFRESH = ("batch", "epoch", "frozen")
ROTATION_MODES = ("all", "sampled", "none")


@dataclass(frozen=True)
class TrainConfig:
    """Embedding-training settings. Defaults follow the full-scale schedule."""

    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epochs: int = 65
    milestones: Tuple[int, ...] = (30, 45, 60)
    lr_decay: float = 0.1
    batch_size: int = 64
    mixer: str = "seppmix"
    grid_n: int = 2
    mix_probability: float = 1.0
    mix_beta_alpha: float = 1.0
    rotations: str = "all"
    lm_rotation_reduction: str = "sum"
    alpha: float = 1.0
    beta: float = 0.5
    cam_refresh: str = "batch"
    freeze_head: bool = False
    pretrain_epochs: int = 5
    hflip: bool = True
    dropout: float = 0.0
    channels: Tuple[int, ...] = DESK_CHANNELS
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "milestones", tuple(int(m) for m in self.milestones))
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        self.validate()

    def validate(self) -> None:
        def bad(msg):
            raise ConfigError(msg)

        if self.epochs < 1 or self.pretrain_epochs < 0:
            bad("epochs must be >= 1 and pretrain_epochs >= 0")
        m = self.milestones
        if any(b <= a for a, b in zip(m, m[1:])):
            bad(f"milestones must be strictly increasing: {m}")
        if m and (m[0] < 1 or m[-1] >= self.epochs):
            bad(f"milestones {m} must lie in [1, epochs={self.epochs})")
        if self.lr <= 0 or self.momentum < 0 or self.weight_decay < 0 or self.lr_decay <= 0:
            bad("lr, momentum, weight_decay or lr_decay out of range")
        if self.batch_size < 2:
            bad("batch_size must be >= 2")
        if self.mixer not in MIXERS:
            bad(f"mixer must be one of {MIXERS}, got {self.mixer!r}")
        if self.grid_n < 1:
            bad("grid_n must be >= 1")
        if not 0.0 <= self.mix_probability <= 1.0 or self.mix_beta_alpha <= 0:
            bad("mix_probability must be in [0, 1] and mix_beta_alpha > 0")
        if self.rotations not in ROTATION_MODES:
            bad(f"rotations must be one of {ROTATION_MODES}")
        if self.lm_rotation_reduction not in ("sum", "mean"):
            bad("lm_rotation_reduction must be 'sum' or 'mean'")
        if not (self.alpha >= 0 and self.beta >= 0):
            bad("alpha and beta must be >= 0")
        if self.cam_refresh not in CAM_REFRESH:
            bad(f"cam_refresh must be one of {CAM_REFRESH}")
        if not 0.0 <= self.dropout < 1.0:
            bad("dropout must be in [0, 1)")
        if not self.channels or min(self.channels) < 1:
            bad("channels must be a non-empty list of positive ints")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["milestones"] = list(self.milestones)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]

    def lr_at(self, epoch: int) -> float:
        """Learning rate in effect during (0-indexed) ``epoch``."""
        drops = sum(1 for m in self.milestones if epoch >= m)
        return self.lr * self.lr_decay ** drops
