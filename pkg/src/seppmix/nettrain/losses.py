"""Soft-label classification loss, rotation loss and their weighted sum."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from ..errors import InputDomainError, NumericalError


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 0.5

    def __post_init__(self):
        for name in ("alpha", "beta"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise InputDomainError(f"{name} must be finite and >= 0, got {v}")


@dataclass
class MixTarget:
    """Per-item two-term soft label ``rho_a * e[class_a] + rho_b * e[class_b]``."""

    class_a: torch.Tensor
    class_b: torch.Tensor
    rho_a: torch.Tensor
    rho_b: torch.Tensor

    @classmethod
    def from_batch(cls, batch, dtype=torch.float32) -> "MixTarget":
        return cls(torch.as_tensor(batch.class_a, dtype=torch.long),
                   torch.as_tensor(batch.class_b, dtype=torch.long),
                   torch.as_tensor(batch.rho_a, dtype=dtype),
                   torch.as_tensor(batch.rho_b, dtype=dtype))

    @classmethod
    def hard(cls, labels, dtype=torch.float32) -> "MixTarget":
        labels = torch.as_tensor(labels, dtype=torch.long)
        return cls(labels, labels, torch.ones(len(labels), dtype=dtype),
                   torch.zeros(len(labels), dtype=dtype))

    def __len__(self):
        return len(self.class_a)

    def repeat(self, times: int) -> "MixTarget":
        return MixTarget(self.class_a.repeat(times), self.class_b.repeat(times),
                         self.rho_a.repeat(times), self.rho_b.repeat(times))

    def index(self, idx) -> "MixTarget":
        return MixTarget(self.class_a[idx], self.class_b[idx], self.rho_a[idx], self.rho_b[idx])

    def dominant(self) -> torch.Tensor:
        return torch.where(self.rho_a >= self.rho_b, self.class_a, self.class_b)

    def dense(self, num_classes: int) -> torch.Tensor:
        out = torch.zeros(len(self), num_classes, dtype=self.rho_a.dtype)
        rows = torch.arange(len(self))
        out.index_put_((rows, self.class_a), self.rho_a, accumulate=True)
        out.index_put_((rows, self.class_b), self.rho_b, accumulate=True)
        return out


def _check_finite(logits):
    if not torch.isfinite(logits).all():
        raise NumericalError("non-finite logits")


def soft_cross_entropy(logits: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """``sum_k target_k * -log softmax(logits)_k`` over the last axis."""
    _check_finite(logits)
    return -(target * F.log_softmax(logits, dim=-1)).sum(dim=-1)


def mixed_cross_entropy(logits: torch.Tensor, target: MixTarget) -> torch.Tensor:
    """Per-item ``rho_a * CE(logits, a) + rho_b * CE(logits, b)``."""
    _check_finite(logits)
    logp = F.log_softmax(logits, dim=-1)
    lp_a = logp.gather(1, target.class_a[:, None])[:, 0]
    lp_b = logp.gather(1, target.class_b[:, None])[:, 0]
    return -(target.rho_a * lp_a + target.rho_b * lp_b)


def mixed_classification_loss(class_logits: torch.Tensor, target: MixTarget,
                              rotations_per_image: int = 4,
                              reduction: str = "sum") -> torch.Tensor:
    """Classification loss on rotated mixed images.

    ``class_logits`` holds one row per (image, rotation) and ``target`` the
    matching soft label. Items are averaged over the batch; with
    ``reduction="sum"`` the per-rotation means are then summed over the
    ``rotations_per_image`` rotations, with ``"mean"`` they are averaged.
    """
    if len(target) == 0:
        raise InputDomainError("empty batch")
    if reduction not in ("sum", "mean"):
        raise InputDomainError(f"unknown reduction {reduction!r}")
    loss = mixed_cross_entropy(class_logits, target).mean()
    return loss * rotations_per_image if reduction == "sum" else loss


def rotation_loss(rot_logits: torch.Tensor, rot_targets: torch.Tensor) -> torch.Tensor:
    """Hard-label 4-way cross-entropy averaged over rotations and batch items."""
    if len(rot_targets) == 0:
        raise InputDomainError("empty batch")
    _check_finite(rot_logits)
    return F.cross_entropy(rot_logits, torch.as_tensor(rot_targets, dtype=torch.long))


def total_loss(l_m, l_r, w: LossWeights = LossWeights()):
    return w.alpha * l_m + w.beta * l_r
