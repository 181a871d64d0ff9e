"""Reconstruction, perceptual, style and adversarial objectives.

Feature-based terms run through a pluggable frozen extractor. Two are
provided: a fixed-seed random conv net for small-scale runs, and a VGG-19
feature graph that loads externally supplied pretrained weights. Reports and
checkpoints carry the extractor's provenance string so numbers from the two
are never conflated.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .blocks import init_orthogonal

PROVENANCE_SURROGATE = "fixed-seed-surrogate"
PROVENANCE_VGG19 = "pretrained-vgg19"


@dataclass(frozen=True)
class LossWeights:
    lambda_recon: float = 10.0
    lambda_per: float = 5.0
    lambda_sty: float = 5.0
    lambda_gan: float = 5.0
    layer_weights: tuple = (0.25, 0.25, 0.25, 0.25)

    def __post_init__(self):
        object.__setattr__(self, "layer_weights", tuple(float(w) for w in self.layer_weights))
        for name in ("lambda_recon", "lambda_per", "lambda_sty", "lambda_gan"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if any(w < 0 for w in self.layer_weights):
            raise ValueError("layer_weights must be >= 0")


class SurrogateFeatureExtractor(nn.Module):
    """Frozen random-weight conv pyramid with four feature taps.

    Weights are a pure function of the seed, so features are reproducible
    across runs and machines without shipping pretrained files.
    """

    provenance = PROVENANCE_SURROGATE

    def __init__(self, seed: int = 0, base_channels: int = 16):
        super().__init__()
        widths = [base_channels, base_channels * 2, base_channels * 4, base_channels * 4]
        stages = []
        cin = 3
        for cout in widths:
            stages.append(nn.Sequential(
                nn.Conv2d(cin, cout, 3, padding=1), nn.ReLU(inplace=True)))
            cin = cout
        self.stages = nn.ModuleList(stages)
        init_orthogonal(self, seed)
        self.requires_grad_(False)
        self.eval()

    @property
    def n_taps(self) -> int:
        return len(self.stages)

    def features(self, x: torch.Tensor) -> list:
        if x.dim() != 4 or x.shape[1] != 3:
            raise ValueError(f"expected Nx3xHxW input, got {tuple(x.shape)}")
        taps = []
        h = x
        for i, stage in enumerate(self.stages):
            if i:
                h = F.avg_pool2d(h, 2)
            h = stage(h)
            taps.append(h)
        return taps

    def pooled(self, x: torch.Tensor) -> torch.Tensor:
        """Global-average-pooled deepest tap, for distribution-level metrics."""
        return self.features(x)[-1].mean(dim=(2, 3))

    def forward(self, x):
        return self.features(x)


# Conv widths of the first four VGG-19 stages; "P" marks 2x max pooling.
_VGG19_STAGES = (
    (64, 64),
    (128, 128),
    (256, 256, 256, 256),
    (512, 512, 512, 512),
)
_IMAGENET_MEAN = (0.485, 0.456, 0.406)
_IMAGENET_STD = (0.229, 0.224, 0.225)


class VGG19Features(nn.Module):
    """First four stages of VGG-19, tapped after each stage's last activation.

    Weights come from a locally supplied state dict in the common
    `features.<idx>.<param>` layout (bare `<idx>.<param>` keys also accepted);
    nothing is downloaded. Inputs in [-1, 1] are remapped and standardized
    with the usual ImageNet statistics before the first conv.
    """

    provenance = PROVENANCE_VGG19

    def __init__(self, weights_path: Optional[str] = None):
        super().__init__()
        layers = []
        self._tap_indices = []
        cin = 3
        for s, stage in enumerate(_VGG19_STAGES):
            if s:
                layers.append(nn.MaxPool2d(2))
            for cout in stage:
                layers += [nn.Conv2d(cin, cout, 3, padding=1), nn.ReLU(inplace=True)]
                cin = cout
            self._tap_indices.append(len(layers) - 1)
        self.features_net = nn.Sequential(*layers)
        if weights_path is not None:
            self.load_pretrained(weights_path)
        self.requires_grad_(False)
        self.eval()

    @property
    def n_taps(self) -> int:
        return len(self._tap_indices)

    def load_pretrained(self, path: str) -> None:
        raw = torch.load(path, map_location="cpu", weights_only=True)
        if not isinstance(raw, dict):
            raise ValueError(f"{path}: expected a state dict")
        own = self.features_net.state_dict()
        picked = {}
        for key, value in raw.items():
            name = key[len("features."):] if key.startswith("features.") else key
            if name in own:
                picked[name] = value
        missing = sorted(set(own) - set(picked))
        if missing:
            raise ValueError(f"{path}: missing parameters: {', '.join(missing)}")
        self.features_net.load_state_dict(picked)

    def features(self, x: torch.Tensor) -> list:
        if x.dim() != 4 or x.shape[1] != 3:
            raise ValueError(f"expected Nx3xHxW input, got {tuple(x.shape)}")
        mean = x.new_tensor(_IMAGENET_MEAN).view(1, 3, 1, 1)
        std = x.new_tensor(_IMAGENET_STD).view(1, 3, 1, 1)
        h = ((x + 1.0) * 0.5 - mean) / std
        taps = []
        for i, layer in enumerate(self.features_net):
            h = layer(h)
            if i in self._tap_indices:
                taps.append(h)
        return taps

    def pooled(self, x: torch.Tensor) -> torch.Tensor:
        return self.features(x)[-1].mean(dim=(2, 3))

    def forward(self, x):
        return self.features(x)


def recon_l1(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {tuple(pred.shape)} vs {tuple(target.shape)}")
    return (pred - target).abs().mean()


def perceptual_loss(pred, target, fx, layer_weights: Sequence[float]) -> torch.Tensor:
    """Weighted mean-absolute feature distance, normalized per layer."""
    fp = fx.features(pred)
    ft = fx.features(target)
    if len(layer_weights) != len(fp):
        raise ValueError(f"got {len(layer_weights)} layer weights for {len(fp)} taps")
    total = pred.new_zeros(())
    for w, a, b in zip(layer_weights, fp, ft):
        total = total + w * (a - b).abs().mean()
    return total


def gram_matrix(feat: torch.Tensor) -> torch.Tensor:
    """CxC correlation of one CxHxW feature map, normalized by C*H*W."""
    if feat.dim() != 3:
        raise ValueError(f"expected CxHxW single sample, got {tuple(feat.shape)}")
    c, h, w = feat.shape
    flat = feat.reshape(c, h * w)
    return flat @ flat.t() / (c * h * w)


def _gram_batch(feat):
    n, c, h, w = feat.shape
    flat = feat.reshape(n, c, h * w)
    return flat @ flat.transpose(1, 2) / (c * h * w)


def style_loss(pred, target, fx) -> torch.Tensor:
    """Squared Frobenius distance between Gram matrices, batch-averaged, summed over taps."""
    total = pred.new_zeros(())
    for a, b in zip(fx.features(pred), fx.features(target)):
        diff = _gram_batch(a) - _gram_batch(b)
        total = total + diff.pow(2).sum(dim=(1, 2)).mean()
    return total


def gan_loss_g(fake_scores: torch.Tensor) -> torch.Tensor:
    """Non-saturating generator objective: fake patches scored as real."""
    return F.binary_cross_entropy_with_logits(fake_scores, torch.ones_like(fake_scores))


def gan_loss_d(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    real_term = F.binary_cross_entropy_with_logits(real_scores, torch.ones_like(real_scores))
    fake_term = F.binary_cross_entropy_with_logits(fake_scores, torch.zeros_like(fake_scores))
    return 0.5 * (real_term + fake_term)


def l1_terms(pred_coarse, target, weights: LossWeights, fx) -> dict:
    """Coarse-stage objective terms; no adversarial component at this stage."""
    recon = recon_l1(pred_coarse, target)
    per = perceptual_loss(pred_coarse, target, fx, weights.layer_weights)
    total = weights.lambda_recon * recon + weights.lambda_per * per
    return {"recon": recon, "per": per, "total": total}


def l2_terms(pred_final, target, weights: LossWeights, fx,
             fake_scores_shape, fake_scores_app) -> dict:
    """Full objective on the composed image; adversarial terms from both critics."""
    recon = recon_l1(pred_final, target)
    per = perceptual_loss(pred_final, target, fx, weights.layer_weights)
    sty = style_loss(pred_final, target, fx)
    gan = gan_loss_g(fake_scores_shape) + gan_loss_g(fake_scores_app)
    total = (weights.lambda_recon * recon + weights.lambda_per * per
             + weights.lambda_sty * sty + weights.lambda_gan * gan)
    return {"recon": recon, "per": per, "sty": sty, "gan": gan, "total": total}


def loss_L1(pred_coarse, target, weights: LossWeights, fx) -> torch.Tensor:
    return l1_terms(pred_coarse, target, weights, fx)["total"]


def loss_L2(pred_final, target, weights: LossWeights, fx,
            fake_scores_shape, fake_scores_app) -> torch.Tensor:
    return l2_terms(pred_final, target, weights, fx,
                    fake_scores_shape, fake_scores_app)["total"]
