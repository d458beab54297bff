"""Checkpoint layout: ``checkpoint.pt`` (state dict) next to ``manifest.json``."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import torch

from .models import FewShotNet

WEIGHTS_FILE = "checkpoint.pt"
MANIFEST_FILE = "manifest.json"


def checkpoint_id(model: torch.nn.Module) -> str:
    """Content hash of the parameters and buffers, stable across save/load."""
    h = hashlib.sha256()
    for name, t in sorted(model.state_dict().items()):
        h.update(name.encode())
        h.update(np.ascontiguousarray(t.detach().cpu().numpy()).tobytes())
    return h.hexdigest()[:16]


def save_checkpoint(model: FewShotNet, out_dir, *, config: dict, epoch: int, metrics: list,
                    extra: dict = None) -> dict:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.save(model.state_dict(), out_dir / WEIGHTS_FILE)
    manifest = {
        "model": model.spec,
        "config": config,
        "seed": config.get("seed"),
        "epoch": epoch,
        "metrics": metrics,
        "checkpoint_id": checkpoint_id(model),
    }
    if extra:
        manifest.update(extra)
    (out_dir / MANIFEST_FILE).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_checkpoint(path):
    """Load from a checkpoint directory or its ``checkpoint.pt``; returns (model, manifest)."""
    path = Path(path)
    ckpt_dir = path if path.is_dir() else path.parent
    manifest = json.loads((ckpt_dir / MANIFEST_FILE).read_text())
    model = FewShotNet.from_spec(manifest["model"])
    state = torch.load(ckpt_dir / WEIGHTS_FILE, map_location="cpu", weights_only=True)
    model.load_state_dict(state)
    model.eval()
    return model, manifest
