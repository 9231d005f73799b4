"""Single-image super-resolution for grayscale micro-CT rock imagery.

Everything runs on numpy: a small reverse-mode tape, the residual
generator with pixel-shuffle upsampling, an adversarial classifier, a
frozen feature network for the perceptual term, and a two-phase trainer
(pixel loss first, adversarial fine-tuning after).  `rocksr.cli` wires
it into the `rocksr` command.
"""

from .autodiff import Parameter, ShapeError, Tape, Tensor
from .checkpoint import (CheckpointError, load_discriminator,
                         load_feature_network, load_generator,
                         save_discriminator, save_feature_network,
                         save_generator)
from .dataset import (AugmentSpec, DatasetManifest, load_manifest,
                      prepare_corpus, sample_patch_batch)
from .errors import DataError
from .images import GrayImage, difference_map, load_image, save_image
from .losses import LossWeights, adversarial_loss, d_loss, g_loss, psnr
from .models import (Discriminator, DiscriminatorConfig, FeatureConfig,
                     FeatureNetwork, Generator, GeneratorConfig,
                     super_resolve)
from .optim import AdamState, adam_step
from .trainer import TrainingDiverged, TrainSchedule, train, validate

__version__ = "0.1.0"

__all__ = [
    "AdamState", "AugmentSpec", "CheckpointError", "DataError",
    "DatasetManifest", "Discriminator", "DiscriminatorConfig",
    "FeatureConfig", "FeatureNetwork", "Generator", "GeneratorConfig",
    "GrayImage", "LossWeights", "Parameter", "ShapeError", "Tape",
    "Tensor", "TrainSchedule", "TrainingDiverged", "adam_step",
    "adversarial_loss", "d_loss", "difference_map", "g_loss",
    "load_discriminator", "load_feature_network", "load_generator",
    "load_image", "load_manifest", "prepare_corpus", "psnr",
    "sample_patch_batch", "save_discriminator", "save_feature_network",
    "save_generator", "save_image", "super_resolve", "train", "validate",
]
