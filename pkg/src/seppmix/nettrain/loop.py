"""CAM-bootstrap pretraining and the mixed/rotation training loop."""

from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, replace
from typing import Callable, List, Optional

import numpy as np
import torch

from ..cam import compute_cams, normalize_to_semantic_map
from ..errors import ConfigError, InputDomainError, NumericalError
from ..mixkit import make_rng, mix_batch
from .config import TrainConfig
from .losses import LossWeights, MixTarget, mixed_classification_loss, rotation_loss, total_loss
from .models import FewShotNet

log = logging.getLogger(__name__)


@dataclass
class TrainResult:
    model: FewShotNet
    history: List[dict]
    config: TrainConfig

    @property
    def embedding(self):
        return self.model.embedding


@dataclass
class LossParts:
    l_m: torch.Tensor
    l_r: torch.Tensor
    l_base: torch.Tensor
    class_logits: torch.Tensor
    rot_logits: torch.Tensor
    rot_targets: torch.Tensor


def rotate_batch(x: torch.Tensor, mode: str, rng: Optional[np.random.Generator] = None):
    """Rotated copies of ``x`` for a rotation mode.

    Returns ``(images, rotation targets, item index, rotations per image)``;
    ``item index`` maps every output row back to its source row in ``x``.
    """
    b = len(x)
    if mode == "all":
        images = torch.cat([torch.rot90(x, k, dims=(2, 3)) for k in range(4)])
        return images, torch.arange(4).repeat_interleave(b), torch.arange(b).repeat(4), 4
    if mode == "sampled":
        ks = rng.integers(0, 4, size=b)
        images = torch.stack([torch.rot90(x[i], int(k), dims=(1, 2)) for i, k in enumerate(ks)])
        return images, torch.as_tensor(ks, dtype=torch.long), torch.arange(b), 1
    if mode == "none":
        return x, torch.zeros(b, dtype=torch.long), torch.arange(b), 1
    raise InputDomainError(f"unknown rotation mode {mode!r}")


def compute_losses(model: FewShotNet, images: torch.Tensor, target: MixTarget, *,
                   rotations: str = "all", weights: LossWeights = LossWeights(),
                   reduction: str = "sum", rng=None) -> LossParts:
    """One forward pass over the rotated batch and the three losses.

    With ``rotations="none"`` the rotation task is switched off and ``l_r`` is 0.
    """
    rotated, rot_targets, item, reps = rotate_batch(images, rotations, rng)
    _, _, class_logits, rot_logits = model(rotated)
    l_m = mixed_classification_loss(class_logits, target.index(item), reps, reduction)
    if rotations == "none":
        l_r = torch.zeros((), dtype=l_m.dtype)
    else:
        l_r = rotation_loss(rot_logits, rot_targets)
    return LossParts(l_m, l_r, total_loss(l_m, l_r, weights), class_logits, rot_logits,
                     rot_targets)


@torch.no_grad()
def semantic_maps(model: FewShotNet, images: np.ndarray, labels) -> np.ndarray:
    """Semantic maps of ``images`` under their labels, from a gradient-free forward."""
    was_training = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    features, _ = model.embedding(torch.as_tensor(images, dtype=dtype))
    weights = model.classifier.weight
    cams = compute_cams(features.double().numpy(), weights.double().numpy(), labels,
                        images.shape[-2], images.shape[-1])
    model.train(was_training)
    return np.stack([normalize_to_semantic_map(c) for c in cams])


def _check_dataset(dataset):
    if len(dataset) == 0:
        raise InputDomainError("empty dataset")


def train(dataset, config: TrainConfig, pretrained: Optional[FewShotNet] = None, *,
          on_epoch: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Train the embedding network on ``dataset`` (the base classes).

    Each step flips, mixes (partners drawn by in-batch permutation), rotates
    and takes one SGD step on ``alpha * L_m + beta * L_r``. When ``pretrained``
    is given, training starts from its weights, and for ``seppmix`` it is the
    source of the initial semantic maps.
    """
    _check_dataset(dataset)
    config.validate()
    if config.mixer == "seppmix" and pretrained is None:
        raise ConfigError("mixer 'seppmix' needs a pretrained model as CAM source")
    h, w = dataset.images.shape[-2:]
    if config.rotations != "none" and h != w:
        raise ConfigError("rotation training needs square images")

    seeds = np.random.SeedSequence(config.seed).spawn(2)
    order_rng = make_rng(seeds[0].generate_state(1, np.uint64)[0])
    mix_rng = make_rng(seeds[1].generate_state(1, np.uint64)[0])
    torch.manual_seed(config.seed)
    model = FewShotNet(dataset.num_classes, config.channels, dataset.images.shape[1],
                       config.dropout)
    if pretrained is not None:
        if pretrained.spec["num_classes"] != dataset.num_classes or \
                list(pretrained.spec["channels"]) != list(config.channels):
            raise ConfigError("pretrained model does not match dataset classes or channels")
        model.load_state_dict(pretrained.state_dict())
    model.train()

    cam_model = None
    if config.mixer == "seppmix" and config.cam_refresh == "frozen":
        cam_model = copy.deepcopy(pretrained).eval()

    params = [p for name, p in model.named_parameters()
              if not (config.freeze_head and name.startswith("classifier."))]
    opt = torch.optim.SGD(params, lr=config.lr, momentum=config.momentum,
                          weight_decay=config.weight_decay)
    sched = torch.optim.lr_scheduler.MultiStepLR(opt, list(config.milestones),
                                                 gamma=config.lr_decay)
    weights = LossWeights(config.alpha, config.beta)
    images_all = np.asarray(dataset.images, dtype=np.float32)
    labels_all = dataset.labels
    n = len(dataset)
    bs = min(config.batch_size, n)

    history = []
    for epoch in range(config.epochs):
        if config.mixer == "seppmix" and config.cam_refresh == "epoch":
            cam_model = copy.deepcopy(model).eval()
        lr = opt.param_groups[0]["lr"]
        perm = order_rng.permutation(n)
        sums = np.zeros(3)
        correct = seen = steps = 0
        for start in range(0, n - bs + 1, bs):
            idx = perm[start:start + bs]
            x = images_all[idx]
            y = labels_all[idx]
            if config.hflip:
                flips = order_rng.random(len(idx)) < 0.5
                x[flips] = x[flips][..., ::-1]
            maps = None
            if config.mixer == "seppmix":
                maps = semantic_maps(cam_model if cam_model is not None else model, x, y)
            batch = mix_batch(x, y, config.mixer, mix_rng, num_classes=dataset.num_classes,
                              grid_n=config.grid_n, semantic_maps=maps,
                              beta_alpha=config.mix_beta_alpha,
                              mix_probability=config.mix_probability)
            target = MixTarget.from_batch(batch)
            parts = compute_losses(model, torch.from_numpy(batch.images), target,
                                   rotations=config.rotations, weights=weights,
                                   reduction=config.lm_rotation_reduction, rng=mix_rng)
            if not torch.isfinite(parts.l_base):
                raise NumericalError(f"non-finite loss at epoch {epoch}")
            opt.zero_grad()
            parts.l_base.backward()
            opt.step()

            sums += [parts.l_m.item(), parts.l_r.item(), parts.l_base.item()]
            b = len(idx)
            pred = parts.class_logits[:b].argmax(1)
            correct += int((pred == target.dominant()).sum())
            seen += b
            steps += 1
        sched.step()
        l_m, l_r, l_base = (float(v) for v in sums / steps)
        record = {"epoch": epoch, "lr": lr, "L_m": l_m, "L_r": l_r, "L_base": l_base,
                  "train_acc": correct / seen}
        history.append(record)
        log.info("epoch %d lr %.5g L_m %.4f L_r %.4f L_base %.4f acc %.3f", epoch, lr, l_m,
                 l_r, l_base, record["train_acc"])
        if on_epoch is not None:
            on_epoch(record)
    model.eval()
    return TrainResult(model, history, config)


def pretrain_config(config: TrainConfig) -> TrainConfig:
    """Plain supervised settings for the CAM bootstrap stage."""
    return replace(config, mixer="none", rotations="none", beta=0.0,
                   epochs=max(config.pretrain_epochs, 1),
                   milestones=tuple(m for m in config.milestones if m < config.pretrain_epochs))


def pretrain_for_cams(dataset, config: TrainConfig, *, on_epoch=None) -> TrainResult:
    """Hard-label training from scratch, no mixing and no rotation.

    The resulting classifier rows are what the CAMs are computed from.
    """
    _check_dataset(dataset)
    return train(dataset, pretrain_config(config), on_epoch=on_epoch)
