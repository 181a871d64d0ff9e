"""Image quality metrics with pluggable feature extractors and classifiers.

Reports are JSON-serializable dicts with a fixed schema:

    {"ssim": float, "is_mean": float, "is_std": float, "fid": float,
     "lpips": float, "n_samples": int, "extractor_provenance": str}

The provenance field records which extractor produced the feature-space
numbers (FID/LPIPS/IS); values from the fixed-seed surrogate are comparable
only with each other, never with pretrained-extractor results.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
import torch
import torch.nn as nn
from scipy.signal import convolve2d

from .blocks import init_orthogonal
from .data import load_image
from .losses import PROVENANCE_SURROGATE, SurrogateFeatureExtractor

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def _to_chw01(img) -> np.ndarray:
    arr = img.detach().cpu().numpy() if isinstance(img, torch.Tensor) else np.asarray(img)
    if arr.ndim == 3:
        arr = arr[None]
    if arr.ndim != 4:
        raise ValueError(f"expected (N,)CxHxW image, got shape {arr.shape}")
    return (arr.astype(np.float64) + 1.0) / 2.0


def ssim(a, b) -> float:
    """Single-scale SSIM with a Gaussian window, per channel, then averaged.

    Inputs live in [-1, 1] and are remapped to unit dynamic range internally;
    windows are valid-mode (no padded borders).
    """
    xa, xb = _to_chw01(a), _to_chw01(b)
    if xa.shape != xb.shape:
        raise ValueError(f"shape mismatch: {xa.shape} vs {xb.shape}")
    h, w = xa.shape[2:]
    if h < SSIM_WINDOW or w < SSIM_WINDOW:
        raise ValueError(f"image {h}x{w} smaller than the {SSIM_WINDOW}-pixel window")
    kernel = _gaussian_window()
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    vals = []
    for xi, yi in zip(xa.reshape(-1, h, w), xb.reshape(-1, h, w)):
        mu_x = convolve2d(xi, kernel, mode="valid")
        mu_y = convolve2d(yi, kernel, mode="valid")
        sxx = convolve2d(xi * xi, kernel, mode="valid") - mu_x ** 2
        syy = convolve2d(yi * yi, kernel, mode="valid") - mu_y ** 2
        sxy = convolve2d(xi * yi, kernel, mode="valid") - mu_x * mu_y
        num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
        den = (mu_x ** 2 + mu_y ** 2 + c1) * (sxx + syy + c2)
        vals.append(np.mean(num / den))
    return float(np.mean(vals))


def _check_features(feats, tag: str) -> np.ndarray:
    arr = np.asarray(feats, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{tag}: expected NxD features, got shape {arr.shape}")
    if arr.shape[0] < 2:
        raise ValueError(f"{tag}: need at least 2 samples, got {arr.shape[0]}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{tag}: non-finite feature values")
    return arr


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(mat)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def fid_from_moments(mu_a, cov_a, mu_b, cov_b) -> float:
    """Frechet distance between two Gaussians given exact moments."""
    mu_a = np.asarray(mu_a, dtype=np.float64)
    mu_b = np.asarray(mu_b, dtype=np.float64)
    cov_a = np.asarray(cov_a, dtype=np.float64)
    cov_b = np.asarray(cov_b, dtype=np.float64)
    diff = mu_a - mu_b
    sqrt_a = _psd_sqrt(cov_a)
    inner = sqrt_a @ cov_b @ sqrt_a
    vals = np.linalg.eigvalsh(inner)
    vals = np.clip(vals, 0.0, None)  # tolerate tiny negative round-off
    tr_sqrt = np.sqrt(vals).sum()
    return float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * tr_sqrt)


def fid(feats_a, feats_b) -> float:
    """Frechet distance between Gaussian fits of two feature sets (ddof=1)."""
    a = _check_features(feats_a, "feats_a")
    b = _check_features(feats_b, "feats_b")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"feature dims differ: {a.shape[1]} vs {b.shape[1]}")
    return fid_from_moments(a.mean(axis=0), np.cov(a, rowvar=False),
                            b.mean(axis=0), np.cov(b, rowvar=False))


def inception_score(probs, n_splits: int = 10) -> tuple:
    """exp(mean KL(row || marginal)), split into chunks; returns (mean, std)."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 2:
        raise ValueError(f"expected NxK probabilities, got shape {p.shape}")
    if (p < 0).any() or not np.isfinite(p).all():
        raise ValueError("probabilities must be finite and non-negative")
    if np.abs(p.sum(axis=1) - 1.0).max() > 1e-5:
        raise ValueError("probability rows must sum to 1")
    scores = []
    for chunk in np.array_split(p, min(n_splits, p.shape[0])):
        marginal = chunk.mean(axis=0)
        mask = chunk > 0
        logs = np.zeros_like(chunk)
        logs[mask] = np.log(chunk[mask]) - np.log(marginal[np.nonzero(mask)[1]])
        kl = (chunk * logs).sum(axis=1)
        scores.append(np.exp(kl.mean()))
    return float(np.mean(scores)), float(np.std(scores))


def lpips_distance(a: torch.Tensor, b: torch.Tensor, fx,
                   channel_weights: Optional[Sequence] = None) -> float:
    """Perceptual distance: channel-normalized feature diffs, weighted, pooled.

    ``channel_weights`` is one weight vector per tap (defaults to all-ones).
    """
    if a.dim() == 3:
        a, b = a[None], b[None]
    fa = fx.features(a)
    fb = fx.features(b)
    if channel_weights is not None and len(channel_weights) != len(fa):
        raise ValueError(f"got {len(channel_weights)} weight vectors for {len(fa)} taps")
    total = 0.0
    for i, (xa, xb) in enumerate(zip(fa, fb)):
        na = xa / torch.sqrt((xa ** 2).sum(dim=1, keepdim=True) + 1e-10)
        nb = xb / torch.sqrt((xb ** 2).sum(dim=1, keepdim=True) + 1e-10)
        d2 = (na - nb) ** 2
        if channel_weights is None:
            w = torch.ones(xa.shape[1], dtype=xa.dtype)
        else:
            w = torch.as_tensor(channel_weights[i], dtype=xa.dtype)
            if w.numel() != xa.shape[1]:
                raise ValueError(f"tap {i}: {w.numel()} channel weights for "
                                 f"{xa.shape[1]} channels")
        layer = (d2 * w.view(1, -1, 1, 1)).sum(dim=1).mean(dim=(1, 2))
        total = total + layer.mean()
    return float(total)


class SurrogateClassifier(nn.Module):
    """Frozen fixed-seed conv classifier emitting class probabilities."""

    provenance = PROVENANCE_SURROGATE

    def __init__(self, n_classes: int = 10, seed: int = 7):
        super().__init__()
        self.n_classes = n_classes
        self.body = nn.Sequential(
            nn.Conv2d(3, 16, 3, stride=2, padding=1), nn.ReLU(inplace=True),
            nn.Conv2d(16, 32, 3, stride=2, padding=1), nn.ReLU(inplace=True),
            nn.Conv2d(32, 64, 3, stride=2, padding=1), nn.ReLU(inplace=True),
            nn.AdaptiveAvgPool2d(1), nn.Flatten(),
            nn.Linear(64, n_classes),
        )
        init_orthogonal(self, seed)
        self.requires_grad_(False)
        self.eval()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[1] != 3:
            raise ValueError(f"expected Nx3xHxW input, got {tuple(x.shape)}")
        return torch.softmax(self.body(x), dim=1)


@dataclass(frozen=True)
class MetricReport:
    ssim: float
    is_mean: float
    is_std: float
    fid: float
    lpips: float
    n_samples: int
    extractor_provenance: str

    def to_dict(self) -> dict:
        return asdict(self)


def report_table(report: MetricReport) -> str:
    """One aligned header/value row; arrows mark the preferred direction."""
    cols = [("SSIM↑", f"{report.ssim:.3f}"),
            ("IS↑", f"{report.is_mean:.3f}±{report.is_std:.3f}"),
            ("FID↓", f"{report.fid:.3f}"),
            ("LPIPS↓", f"{report.lpips:.3f}"),
            ("n", str(report.n_samples))]
    widths = [max(len(h), len(v)) for h, v in cols]
    head = "  ".join(h.ljust(w) for (h, _), w in zip(cols, widths))
    row = "  ".join(v.ljust(w) for (_, v), w in zip(cols, widths))
    return head + "\n" + row


def evaluate_directory(pred_dir: str, gt_dir: str, fx=None, classifier=None,
                       n_splits: int = 10) -> MetricReport:
    """Paired metrics over matching PNG filenames, plus set-level FID and IS."""
    fx = SurrogateFeatureExtractor() if fx is None else fx
    classifier = SurrogateClassifier() if classifier is None else classifier

    pred_names = {n for n in os.listdir(pred_dir) if n.endswith(".png")}
    gt_names = {n for n in os.listdir(gt_dir) if n.endswith(".png")}
    if pred_names != gt_names:
        orphans = sorted(pred_names ^ gt_names)
        raise ValueError("unmatched filenames: " + ", ".join(orphans))
    if not pred_names:
        raise ValueError("no PNG images to evaluate")

    ssim_vals, lpips_vals = [], []
    pred_feats, gt_feats, probs = [], [], []
    with torch.no_grad():
        for name in sorted(pred_names):
            pred = load_image(os.path.join(pred_dir, name))[None]
            gt = load_image(os.path.join(gt_dir, name))[None]
            if pred.shape != gt.shape:
                raise ValueError(f"{name}: size mismatch between directories")
            ssim_vals.append(ssim(pred, gt))
            lpips_vals.append(lpips_distance(pred, gt, fx))
            pred_feats.append(fx.pooled(pred).numpy())
            gt_feats.append(fx.pooled(gt).numpy())
            probs.append(classifier(pred).numpy())

    is_mean, is_std = inception_score(np.concatenate(probs), n_splits)
    return MetricReport(
        ssim=float(np.mean(ssim_vals)),
        is_mean=is_mean,
        is_std=is_std,
        fid=fid(np.concatenate(pred_feats), np.concatenate(gt_feats)),
        lpips=float(np.mean(lpips_vals)),
        n_samples=len(pred_names),
        extractor_provenance=fx.provenance,
    )
