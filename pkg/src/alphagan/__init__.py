"""Adversarial natural image matting: data pipeline, networks, training and metrics."""

from .config import RunConfig, TrainConfig, load_config
from .datapipe import AugmentConfig, SourceItem, TrainingSample, composite, make_training_sample, synthesize_trimap
from .discriminator import DiscriminatorConfig, PatchDiscriminator, init_discriminator
from .generator import Generator, GeneratorConfig, init_weights
from .imgcore import Region, Trimap, load_alpha, load_rgb, load_trimap, save_alpha
from .metrics import connectivity_error, evaluate_dirs, gradient_error, mse, sad
from .trainer import TrainState, predict, train_loop, train_step

__version__ = "0.1.0"

__all__ = [
    "AugmentConfig", "DiscriminatorConfig", "Generator", "GeneratorConfig", "PatchDiscriminator",
    "Region", "RunConfig", "SourceItem", "TrainConfig", "TrainState", "TrainingSample", "Trimap",
    "composite", "connectivity_error", "evaluate_dirs", "gradient_error", "init_discriminator",
    "init_weights", "load_alpha", "load_config", "load_rgb", "load_trimap", "make_training_sample",
    "mse", "predict", "sad", "save_alpha", "synthesize_trimap", "train_loop", "train_step",
]
