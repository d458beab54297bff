"""Networks, losses and training loops."""

from .checkpoint import checkpoint_id, load_checkpoint, save_checkpoint
from .config import TrainConfig
from .losses import (LossWeights, MixTarget, mixed_classification_loss, mixed_cross_entropy,
                     rotation_loss, soft_cross_entropy, total_loss)
from .loop import (LossParts, TrainResult, compute_losses, pretrain_config, pretrain_for_cams,
                   rotate_batch, semantic_maps, train)
from .models import ConvEmbedding, FewShotNet, accuracy

__all__ = [
    "ConvEmbedding", "FewShotNet", "LossParts", "LossWeights", "MixTarget", "TrainConfig",
    "TrainResult", "accuracy", "checkpoint_id", "compute_losses", "load_checkpoint",
    "mixed_classification_loss", "mixed_cross_entropy", "pretrain_config", "pretrain_for_cams",
    "rotate_batch", "rotation_loss", "save_checkpoint", "semantic_maps", "soft_cross_entropy",
    "total_loss", "train",
]
