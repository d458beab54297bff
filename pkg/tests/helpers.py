"""Shared fixtures-as-functions for the loss/training tests and the acceptance run."""

import numpy as np
import torch

from seppmix.datakit import make_synthetic, split_base_novel
from seppmix.mixkit import make_rng, mix_batch
from seppmix.nettrain import FewShotNet, LossWeights, MixTarget, compute_losses, semantic_maps


def tiny_problem(mixer="seppmix", seed=0, batch=4):
    """Tiny float64 network (2 conv maps, 4x4 inputs, 3 classes) and one mixed batch."""
    torch.manual_seed(seed)
    model = FewShotNet(3, channels=(2,)).double()
    rng = make_rng(seed)
    x = rng.random((batch, 3, 4, 4))
    y = rng.integers(0, 3, size=batch)
    maps = semantic_maps(model, x, y) if mixer == "seppmix" else None
    mixed = mix_batch(x, y, mixer, rng, num_classes=3, grid_n=2, semantic_maps=maps)
    return model, torch.from_numpy(mixed.images), MixTarget.from_batch(mixed, torch.float64)


def finite_difference_errors(model, images, target, *, rotations="all",
                             weights=LossWeights(1.0, 0.5), eps=1e-6):
    """Per-parameter relative error ||g - g_fd|| / max(||g||, ||g_fd||) with central differences."""
    model.train()

    def loss():
        return compute_losses(model, images, target, rotations=rotations, weights=weights).l_base

    model.zero_grad()
    loss().backward()
    errors = {}
    with torch.no_grad():
        for name, p in model.named_parameters():
            analytic = p.grad.detach().clone()
            numeric = torch.zeros_like(p)
            flat = p.view(-1)
            for i in range(flat.numel()):
                old = flat[i].item()
                flat[i] = old + eps
                up = loss().item()
                flat[i] = old - eps
                down = loss().item()
                flat[i] = old
                numeric.view(-1)[i] = (up - down) / (2 * eps)
            scale = max(analytic.norm().item(), numeric.norm().item(), 1e-12)
            errors[name] = (analytic - numeric).norm().item() / scale
    return errors


def desk_data():
    ds = make_synthetic(24, 100, 32, 0)
    return split_base_novel(ds, 2 / 3)
