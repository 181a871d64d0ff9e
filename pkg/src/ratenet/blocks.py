"""Conv/residual building blocks shared by the generator halves."""

from __future__ import annotations

from typing import Optional

import torch
import torch.nn as nn

LEAKY_SLOPE = 0.2
ADAIN_EPS = 1e-5


class ConvBlock(nn.Module):
    """Reflect-padded conv, optionally followed by instance norm and LeakyReLU."""

    def __init__(self, in_ch: int, out_ch: int, kernel_size: int = 3, stride: int = 1,
                 norm: bool = True, act: bool = True, slope: float = LEAKY_SLOPE):
        super().__init__()
        if kernel_size % 2 != 1:
            raise ValueError(f"kernel_size must be odd, got {kernel_size}")
        self.conv = nn.Conv2d(in_ch, out_ch, kernel_size, stride=stride,
                              padding=kernel_size // 2, padding_mode="reflect")
        self.norm = nn.InstanceNorm2d(out_ch, affine=True,
                                      track_running_stats=False) if norm else None
        self.act = nn.LeakyReLU(slope, inplace=True) if act else None

    def forward(self, x):
        x = self.conv(x)
        if self.norm is not None:
            x = self.norm(x)
        if self.act is not None:
            x = self.act(x)
        return x


class ResBlock(nn.Module):
    """Two 3x3 conv blocks with an identity skip."""

    def __init__(self, channels: int):
        super().__init__()
        self.block1 = ConvBlock(channels, channels)
        self.block2 = ConvBlock(channels, channels, act=False)

    def forward(self, x):
        return x + self.block2(self.block1(x))


class UpsampleBlock(nn.Module):
    """Nearest 2x upsample followed by a conv block."""

    def __init__(self, in_ch: int, out_ch: int, slope: float = LEAKY_SLOPE):
        super().__init__()
        self.up = nn.Upsample(scale_factor=2, mode="nearest")
        self.block = ConvBlock(in_ch, out_ch, slope=slope)

    def forward(self, x):
        return self.block(self.up(x))


def adain(content: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor,
          eps: float = ADAIN_EPS) -> torch.Tensor:
    """Re-style ``content`` with per-sample, per-channel affine statistics.

    Spatial mean and (biased) variance are computed per (sample, channel);
    ``gamma`` and ``beta`` are (N, C) or broadcastable to (N, C, 1, 1).
    """
    if content.dim() != 4:
        raise ValueError(f"expected NCHW content, got {tuple(content.shape)}")
    n, c = content.shape[:2]
    for name, t in (("gamma", gamma), ("beta", beta)):
        if t.numel() != n * c:
            raise ValueError(f"{name} must carry {n}x{c} values, got {tuple(t.shape)}")
    gamma = gamma.reshape(n, c, 1, 1)
    beta = beta.reshape(n, c, 1, 1)
    mean = content.mean(dim=(2, 3), keepdim=True)
    var = content.var(dim=(2, 3), keepdim=True, unbiased=False)
    return gamma * (content - mean) / torch.sqrt(var + eps) + beta


class AdaINResBlock(nn.Module):
    """Residual block whose normalization statistics come from a style code.

    Each forward consumes two (gamma, beta) pairs, one per internal conv.
    """

    def __init__(self, channels: int, slope: float = LEAKY_SLOPE):
        super().__init__()
        self.channels = channels
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1, padding_mode="reflect")
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1, padding_mode="reflect")
        self.act = nn.LeakyReLU(slope, inplace=False)

    def forward(self, x, gamma1, beta1, gamma2, beta2):
        h = self.act(adain(self.conv1(x), gamma1, beta1))
        h = adain(self.conv2(h), gamma2, beta2)
        return x + h


def init_orthogonal(module: nn.Module, seed: Optional[int] = None) -> nn.Module:
    """Orthogonal weights, zero biases, identity norm affines.

    With a seed, runs inside a forked RNG so the global torch stream is
    untouched; module traversal order is deterministic either way.
    """
    def apply(m):
        for sub in m.modules():
            if isinstance(sub, (nn.Conv2d, nn.Linear)):
                nn.init.orthogonal_(sub.weight)
                if sub.bias is not None:
                    nn.init.zeros_(sub.bias)
            elif isinstance(sub, nn.InstanceNorm2d) and sub.affine:
                nn.init.ones_(sub.weight)
                nn.init.zeros_(sub.bias)

    if seed is None:
        apply(module)
    else:
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            apply(module)
    return module
