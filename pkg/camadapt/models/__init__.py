"""Residual generators, feature-space discriminators and the classifier."""

from camadapt.models.checkpoint import (
    Checkpoint,
    load_checkpoint,
    load_classifier,
    parameter_hash,
    save_checkpoint,
    save_classifier,
)
from camadapt.models.classifier import (
    Classifier,
    ClassifierConfig,
    ClassifierOutput,
    classify,
    predict,
)
from camadapt.models.discriminator import (
    Discriminator,
    DiscriminatorConfig,
    discriminate,
)
from camadapt.models.generator import (
    GeneratorConfig,
    InstanceNorm,
    ResidualGenerator,
    generator_forward,
    transform,
)

__all__ = [
    "Checkpoint",
    "Classifier",
    "ClassifierConfig",
    "ClassifierOutput",
    "Discriminator",
    "DiscriminatorConfig",
    "GeneratorConfig",
    "InstanceNorm",
    "ResidualGenerator",
    "classify",
    "discriminate",
    "generator_forward",
    "load_checkpoint",
    "load_classifier",
    "parameter_hash",
    "predict",
    "save_checkpoint",
    "save_classifier",
    "transform",
]
