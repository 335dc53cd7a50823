"""Pluggable perceptual feature distance for the fine-stage patch loss.

Any callable taking two (H, W, 3) patches in [0, 1] and returning a scalar
tensor plugs in. The shipped desk-scale backend compares unit-normalized
activations of a fixed, seeded, randomly initialized conv stack; a
pretrained feature network can be dropped in through the same interface.
"""

from __future__ import annotations

import torch
import torch.nn as nn

from .core import ShapeMismatchError


class RandomConvFeatures(nn.Module):
    """Frozen 3-layer random conv extractor; differentiable w.r.t. its inputs."""

    def __init__(self, seed: int = 0, channels: int = 16):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        layers = []
        prev = 3
        for _ in range(3):
            conv = nn.Conv2d(prev, channels, kernel_size=3, stride=2, padding=1)
            with torch.no_grad():
                conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen)
                                  / (prev * 9) ** 0.5)
                conv.bias.zero_()
            layers.append(conv)
            prev = channels
        self.stages = nn.ModuleList(layers)
        for p in self.parameters():
            p.requires_grad_(False)

    def features(self, patch: torch.Tensor):
        if patch.ndim != 3 or patch.shape[-1] != 3:
            raise ShapeMismatchError(f"patch must be (H, W, 3), got {tuple(patch.shape)}")
        h = patch.permute(2, 0, 1).unsqueeze(0)
        outs = []
        for stage in self.stages:
            h = torch.relu(stage(h))
            norm = h.norm(dim=1, keepdim=True).clamp_min(1e-8)
            outs.append(h / norm)
        return outs

    def forward(self, pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
        pred = torch.as_tensor(pred, dtype=torch.float32)
        target = torch.as_tensor(target, dtype=torch.float32)
        if pred.shape != target.shape:
            raise ShapeMismatchError(
                f"patch shapes differ: {tuple(pred.shape)} vs {tuple(target.shape)}")
        dist = torch.zeros(())
        for fp, ft in zip(self.features(pred), self.features(target)):
            dist = dist + ((fp - ft) ** 2).mean()
        return dist / len(self.stages)
