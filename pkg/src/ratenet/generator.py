"""Two-stage generator: pose-driven coarse synthesis plus residual texture refinement.

The pose transfer half runs dual image/pose encoder pathways through a stack
of attention blocks and decodes a coarse RGB estimate. The texture half
compresses source appearance into a code, expands the code into per-layer
normalization statistics, and decodes the pose-aligned content feature into
an additive full-resolution residual.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import torch
import torch.nn as nn

from .blocks import AdaINResBlock, ConvBlock, ResBlock, UpsampleBlock, init_orthogonal
from .data import N_JOINTS


@dataclass(frozen=True)
class GeneratorConfig:
    n_downsample: int = 3
    n_patn_blocks: int = 9
    base_channels: int = 64
    max_channels: int = 256
    texture_code_dim: int = 128
    n_adain_blocks: int = 4
    leaky_slope: float = 0.2

    def __post_init__(self):
        if self.n_downsample < 1:
            raise ValueError("n_downsample must be >= 1")
        if self.n_patn_blocks < 1:
            raise ValueError("n_patn_blocks must be >= 1")
        if self.base_channels < 1 or self.max_channels < self.base_channels:
            raise ValueError("need 1 <= base_channels <= max_channels")
        if self.texture_code_dim < 1:
            raise ValueError("texture_code_dim must be >= 1")
        if self.n_adain_blocks < 1:
            raise ValueError("n_adain_blocks must be >= 1")

    @property
    def widths(self) -> tuple:
        """Encoder widths: stem then each down-sampling stage, doubling, capped."""
        return tuple(min(self.base_channels * 2 ** i, self.max_channels)
                     for i in range(self.n_downsample + 1))

    @property
    def feature_channels(self) -> int:
        return self.widths[-1]

    @property
    def stride(self) -> int:
        return 2 ** self.n_downsample

    @classmethod
    def desk(cls, **overrides) -> "GeneratorConfig":
        """Small variant sized for CPU smoke runs (content features stay 64-wide)."""
        cfg = cls(base_channels=32, max_channels=64, n_patn_blocks=4)
        return replace(cfg, **overrides) if overrides else cfg


class PATNBlock(nn.Module):
    """Dual-pathway attention block.

    The pose pathway emits a sigmoid mask that gates a residual update of the
    image pathway; the pose pathway is then refreshed from the concatenation
    of itself with the updated image features. The last block in a stack is
    built with ``refresh_pose=False`` since nothing consumes its pose output;
    that keeps every parameter in the stack actually trainable.
    """

    def __init__(self, channels: int, slope: float = 0.2, refresh_pose: bool = True):
        super().__init__()
        self.attn = nn.Sequential(
            ConvBlock(channels, channels, slope=slope),
            nn.Conv2d(channels, channels, 3, padding=1, padding_mode="reflect"),
        )
        self.img_update = nn.Sequential(
            ConvBlock(channels, channels, slope=slope),
            ConvBlock(channels, channels, act=False),
        )
        self.pose_update = ConvBlock(2 * channels, channels, slope=slope) \
            if refresh_pose else None

    def attention(self, pose_feat):
        return torch.sigmoid(self.attn(pose_feat))

    def forward(self, img_feat, pose_feat):
        if img_feat.shape[0] != pose_feat.shape[0] or img_feat.shape[2:] != pose_feat.shape[2:]:
            raise ValueError("image and pose features must share batch and spatial dims")
        mask = self.attention(pose_feat)
        img_out = mask * self.img_update(img_feat) + img_feat
        if self.pose_update is None:
            return img_out, None
        pose_out = self.pose_update(torch.cat([pose_feat, img_out], dim=1))
        return img_out, pose_out


def _encoder(in_ch: int, widths, slope: float) -> nn.Sequential:
    layers = [ConvBlock(in_ch, widths[0], kernel_size=7, slope=slope)]
    for cin, cout in zip(widths[:-1], widths[1:]):
        layers.append(ConvBlock(cin, cout, stride=2, slope=slope))
    return nn.Sequential(*layers)


def _decoder(widths, out_ch: int, slope: float) -> nn.Sequential:
    rev = list(reversed(widths))
    layers = [UpsampleBlock(cin, cout, slope) for cin, cout in zip(rev[:-1], rev[1:])]
    layers.append(nn.Conv2d(rev[-1], out_ch, 7, padding=3, padding_mode="reflect"))
    return nn.Sequential(*layers)


def _check_spatial(cfg: GeneratorConfig, h: int, w: int) -> None:
    s = cfg.stride
    if h % s or w % s:
        raise ValueError(f"spatial dims must be multiples of {s}, got {h}x{w}")


class PoseTransferModule(nn.Module):
    """Coarse synthesis: (source image, source pose, target pose) -> (features, image)."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.feature_channels
        self.img_encoder = _encoder(3, cfg.widths, cfg.leaky_slope)
        self.pose_encoder = _encoder(2 * N_JOINTS, cfg.widths, cfg.leaky_slope)
        self.blocks = nn.ModuleList(
            PATNBlock(c, cfg.leaky_slope, refresh_pose=(i + 1 < cfg.n_patn_blocks))
            for i in range(cfg.n_patn_blocks))
        self.decoder = _decoder(cfg.widths, 3, cfg.leaky_slope)

    def forward(self, src_img, src_pose, tgt_pose):
        if src_img.shape[1] != 3:
            raise ValueError(f"source image must have 3 channels, got {src_img.shape[1]}")
        for pose in (src_pose, tgt_pose):
            if pose.shape[1] != N_JOINTS:
                raise ValueError(f"pose heatmaps must have {N_JOINTS} channels")
            if pose.shape[0] != src_img.shape[0] or pose.shape[2:] != src_img.shape[2:]:
                raise ValueError("image and heatmaps must share batch and spatial dims")
        _check_spatial(self.cfg, src_img.shape[2], src_img.shape[3])

        img_feat = self.img_encoder(src_img)
        pose_feat = self.pose_encoder(torch.cat([src_pose, tgt_pose], dim=1))
        for block in self.blocks:
            img_feat, pose_feat = block(img_feat, pose_feat)
        coarse = torch.tanh(self.decoder(img_feat))
        return img_feat, coarse


class TextureEncoder(nn.Module):
    """Source appearance -> compact code via downsampling, residual blocks, mean pool."""

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.feature_channels
        self.body = nn.Sequential(
            _encoder(3, cfg.widths, cfg.leaky_slope),
            ResBlock(c),
            ResBlock(c),
            nn.Conv2d(c, cfg.texture_code_dim, 1),
        )

    def prepool(self, src_img):
        if src_img.shape[1] != 3:
            raise ValueError(f"source image must have 3 channels, got {src_img.shape[1]}")
        _check_spatial(self.cfg, src_img.shape[2], src_img.shape[3])
        return self.body(src_img)

    def forward(self, src_img):
        return self.prepool(src_img).mean(dim=(2, 3))


class TextureEnhancer(nn.Module):
    """Decode content features into a residual map, styled by a texture code.

    A single linear head maps the code to every AdaIN (gamma, beta) pair;
    gamma is parameterized as 1 + raw so a zeroed head starts at identity scale.
    The output conv is linear: the residual is unbounded until composition.
    """

    def __init__(self, cfg: GeneratorConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.feature_channels
        self.blocks = nn.ModuleList(
            AdaINResBlock(c, cfg.leaky_slope) for _ in range(cfg.n_adain_blocks))
        # 2 conv layers per block, each needing per-channel gamma and beta.
        self.affine = nn.Linear(cfg.texture_code_dim, cfg.n_adain_blocks * 4 * c)
        decoder = _decoder(cfg.widths, 3, cfg.leaky_slope)
        self.decoder = decoder[:-1]
        self.out_conv = decoder[-1]

    def forward(self, content, code):
        c = self.cfg.feature_channels
        if content.shape[1] != c:
            raise ValueError(f"content features must have {c} channels, got {content.shape[1]}")
        if code.shape[0] != content.shape[0]:
            raise ValueError("content and code batch sizes must match")
        if code.dim() != 2 or code.shape[1] != self.cfg.texture_code_dim:
            raise ValueError(f"texture code must be Nx{self.cfg.texture_code_dim}")
        params = self.affine(code).view(code.shape[0], len(self.blocks), 4, c)
        h = content
        for i, block in enumerate(self.blocks):
            g1, b1, g2, b2 = params[:, i, 0], params[:, i, 1], params[:, i, 2], params[:, i, 3]
            h = block(h, 1.0 + g1, b1, 1.0 + g2, b2)
        return self.out_conv(self.decoder(h))


def compose(coarse: torch.Tensor, residual: torch.Tensor) -> torch.Tensor:
    """Final image: coarse plus residual, clamped to the legal range."""
    if coarse.shape != residual.shape:
        raise ValueError(f"shape mismatch: {tuple(coarse.shape)} vs {tuple(residual.shape)}")
    return torch.clamp(coarse + residual, -1.0, 1.0)


@dataclass
class GeneratorOutput:
    coarse: torch.Tensor
    residual: torch.Tensor
    final: torch.Tensor
    features: torch.Tensor
    code: Optional[torch.Tensor] = None


class RateNetGenerator(nn.Module):
    """Full coarse-to-fine generator; the texture half is optional for ablations."""

    def __init__(self, cfg: GeneratorConfig, use_enhancer: bool = True,
                 init_seed: Optional[int] = None):
        super().__init__()
        self.cfg = cfg
        self.pose_transfer = PoseTransferModule(cfg)
        if use_enhancer:
            self.texture_encoder = TextureEncoder(cfg)
            self.enhancer = TextureEnhancer(cfg)
        else:
            self.texture_encoder = None
            self.enhancer = None
        init_orthogonal(self, init_seed)

    @property
    def use_enhancer(self) -> bool:
        return self.enhancer is not None

    def coarse_parameters(self):
        return list(self.pose_transfer.parameters())

    def texture_parameters(self):
        if not self.use_enhancer:
            return []
        return list(self.texture_encoder.parameters()) + list(self.enhancer.parameters())

    def forward(self, src_img, src_pose, tgt_pose) -> GeneratorOutput:
        features, coarse = self.pose_transfer(src_img, src_pose, tgt_pose)
        if self.use_enhancer:
            code = self.texture_encoder(src_img)
            residual = self.enhancer(features, code)
        else:
            code = None
            residual = torch.zeros_like(coarse)
        return GeneratorOutput(coarse=coarse, residual=residual,
                               final=compose(coarse, residual),
                               features=features, code=code)
