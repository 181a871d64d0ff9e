"""Coarse-to-fine pose-guided person image synthesis."""

from .blocks import adain, init_orthogonal
from .config import (ConfigError, CycleConfig, DataConfig, OptimizerConfig,
                     RunConfig, overfit_preset)
from .data import (Batch, BatchSampler, DatasetError, Keypoints18, TrainingPair,
                   collate, denormalize_image, load_dataset, load_pair,
                   normalize_image, render_heatmap)
from .discriminators import (AppearanceDiscriminator, DiscriminatorConfig,
                             ShapeDiscriminator)
from .generator import (GeneratorConfig, GeneratorOutput, PoseTransferModule,
                        RateNetGenerator, TextureEncoder, TextureEnhancer, compose)
from .losses import (LossWeights, SurrogateFeatureExtractor, VGG19Features,
                     gan_loss_d, gan_loss_g, gram_matrix, loss_L1, loss_L2,
                     perceptual_loss, recon_l1, style_loss)
from .metrics import (MetricReport, SurrogateClassifier, evaluate_directory, fid,
                      fid_from_moments, inception_score, lpips_distance, ssim)
from .optim import LRSchedule, RAdam, lr_at
from .synthetic import make_synthetic_dataset
from .trainer import (TrainingAborted, TrainLogRecord, build_state, infer,
                      load_checkpoint, run_cycle, train)

__version__ = "0.1.0"

__all__ = [
    "AppearanceDiscriminator", "Batch", "BatchSampler", "ConfigError",
    "CycleConfig", "DataConfig", "DatasetError", "DiscriminatorConfig",
    "GeneratorConfig", "GeneratorOutput", "Keypoints18", "LRSchedule",
    "LossWeights", "MetricReport", "OptimizerConfig", "PoseTransferModule",
    "RAdam", "RateNetGenerator", "RunConfig", "ShapeDiscriminator",
    "SurrogateClassifier", "SurrogateFeatureExtractor", "TextureEncoder",
    "TextureEnhancer", "TrainLogRecord", "TrainingAborted", "TrainingPair",
    "VGG19Features", "adain", "build_state", "collate", "compose",
    "denormalize_image", "evaluate_directory", "fid", "fid_from_moments",
    "gan_loss_d", "gan_loss_g", "gram_matrix", "inception_score",
    "infer", "init_orthogonal", "load_checkpoint", "load_dataset", "load_pair",
    "loss_L1", "loss_L2", "lpips_distance", "lr_at", "make_synthetic_dataset",
    "normalize_image", "overfit_preset", "perceptual_loss", "recon_l1",
    "render_heatmap", "run_cycle", "ssim", "style_loss", "train",
]
