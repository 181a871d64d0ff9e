"""Patch-level discriminators for shape and appearance consistency.

Both share a norm-free conv trunk (four stride-2 layers, LeakyReLU 0.2,
final 1-channel conv) and differ only in what gets concatenated onto the
image: the target pose heatmaps for shape, the source image for appearance.
Raw logits come back; objectives apply their own sigmoid.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional

import torch
import torch.nn as nn

from .blocks import init_orthogonal
from .data import N_JOINTS


@dataclass(frozen=True)
class DiscriminatorConfig:
    base_channels: int = 64
    n_layers: int = 4
    leaky_slope: float = 0.2

    def __post_init__(self):
        if self.base_channels < 1:
            raise ValueError("base_channels must be >= 1")
        if self.n_layers < 1:
            raise ValueError("n_layers must be >= 1")

    @classmethod
    def desk(cls, **overrides) -> "DiscriminatorConfig":
        cfg = cls(base_channels=32)
        return replace(cfg, **overrides) if overrides else cfg


class PatchDiscriminator(nn.Module):
    """Conv stack mapping NxCxHxW input to a map of per-patch logits."""

    def __init__(self, in_channels: int, cfg: DiscriminatorConfig,
                 init_seed: Optional[int] = None):
        super().__init__()
        self.in_channels = in_channels
        layers = []
        cin = in_channels
        for i in range(cfg.n_layers):
            cout = cfg.base_channels * 2 ** i
            layers += [nn.Conv2d(cin, cout, 3, stride=2, padding=1),
                       nn.LeakyReLU(cfg.leaky_slope, inplace=True)]
            cin = cout
        layers.append(nn.Conv2d(cin, 1, 3, padding=1))
        self.net = nn.Sequential(*layers)
        init_orthogonal(self, init_seed)

    def forward(self, x):
        if x.shape[1] != self.in_channels:
            raise ValueError(f"expected {self.in_channels} input channels, got {x.shape[1]}")
        return self.net(x)


class ShapeDiscriminator(nn.Module):
    """Scores whether an image is consistent with a pose."""

    def __init__(self, cfg: DiscriminatorConfig = DiscriminatorConfig(),
                 init_seed: Optional[int] = None):
        super().__init__()
        self.trunk = PatchDiscriminator(3 + N_JOINTS, cfg, init_seed)

    def forward(self, img, pose):
        if img.shape[0] != pose.shape[0] or img.shape[2:] != pose.shape[2:]:
            raise ValueError("image and pose must share batch and spatial dims")
        return self.trunk(torch.cat([img, pose], dim=1))


class AppearanceDiscriminator(nn.Module):
    """Scores whether an image's appearance is consistent with a source image."""

    def __init__(self, cfg: DiscriminatorConfig = DiscriminatorConfig(),
                 init_seed: Optional[int] = None):
        super().__init__()
        self.trunk = PatchDiscriminator(6, cfg, init_seed)

    def forward(self, img, src):
        if img.shape != src.shape:
            raise ValueError(f"shape mismatch: {tuple(img.shape)} vs {tuple(src.shape)}")
        return self.trunk(torch.cat([img, src], dim=1))
