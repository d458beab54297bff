"""Embedding network and the two linear heads trained on top of it."""

from __future__ import annotations

from typing import Sequence

import torch
from torch import nn

DESK_CHANNELS = (16, 32, 64, 64)


class ConvEmbedding(nn.Module):
    """Stack of conv3x3 -> BatchNorm -> ReLU -> 2x2 max-pool blocks.

    Convolutions carry no bias since BatchNorm would cancel it.

    ``forward`` returns the last block's feature maps ``(B, c, h, w)`` together
    with their global average pool ``(B, c)``.
    """

    def __init__(self, channels: Sequence[int] = DESK_CHANNELS, in_channels: int = 3):
        super().__init__()
        layers = []
        cin = in_channels
        for cout in channels:
            layers += [
                nn.Conv2d(cin, cout, kernel_size=3, padding=1, bias=False),
                nn.BatchNorm2d(cout),
                nn.ReLU(inplace=True),
                nn.MaxPool2d(2),
            ]
            cin = cout
        self.blocks = nn.Sequential(*layers)
        self.out_channels = cin

    def forward(self, x):
        features = self.blocks(x)
        return features, features.mean(dim=(2, 3))


class FewShotNet(nn.Module):
    """Embedding network plus a base-class classifier and a 4-way rotation head."""

    def __init__(self, num_classes: int, channels: Sequence[int] = DESK_CHANNELS,
                 in_channels: int = 3, dropout: float = 0.0):
        super().__init__()
        self.spec = {"num_classes": int(num_classes), "channels": [int(c) for c in channels],
                     "in_channels": int(in_channels), "dropout": float(dropout)}
        self.embedding = ConvEmbedding(channels, in_channels)
        c = self.embedding.out_channels
        self.dropout = nn.Dropout(dropout) if dropout > 0 else nn.Identity()
        self.classifier = nn.Linear(c, num_classes)
        self.rotation_head = nn.Linear(c, 4)

    @property
    def embed_dim(self) -> int:
        return self.embedding.out_channels

    def forward(self, x):
        features, emb = self.embedding(x)
        h = self.dropout(emb)
        return features, emb, self.classifier(h), self.rotation_head(h)

    @classmethod
    def from_spec(cls, spec: dict) -> "FewShotNet":
        return cls(spec["num_classes"], spec["channels"], spec.get("in_channels", 3),
                   spec.get("dropout", 0.0))


@torch.no_grad()
def accuracy(model: FewShotNet, images, labels, batch_size: int = 256) -> float:
    """Top-1 base-class accuracy in inference mode."""
    was_training = model.training
    model.eval()
    images = torch.as_tensor(images)
    labels = torch.as_tensor(labels)
    correct = 0
    for i in range(0, len(labels), batch_size):
        logits = model(images[i:i + batch_size].to(next(model.parameters()).dtype))[2]
        correct += int((logits.argmax(1) == labels[i:i + batch_size]).sum())
    model.train(was_training)
    return correct / max(len(labels), 1)
