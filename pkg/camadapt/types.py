from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Literal

import torch
from pydantic import BaseModel, ConfigDict, model_validator

type DomainId = str
"""Camera brand token, e.g. ``"A"`` or ``"canon"``."""

type NormKind = Literal["l2", "l1"]
type FeatureMode = Literal["hard", "soft"]
type FeatureBlock = Literal["mi", "hist", "deep"]


class ExitCode(IntEnum):
    """Process exit codes of the command line interface."""

    OK = 0
    CHECK_FAILED = 1
    CONFIG_ERROR = 2
    ARTIFACT_MISMATCH = 3
    IO_ERROR = 4


class CamadaptError(Exception):
    """Base class for errors that map to a command line exit code."""

    exit_code: ExitCode = ExitCode.CHECK_FAILED


class CheckFailedError(CamadaptError):
    """Raised when a numerical check or acceptance check does not pass."""

    exit_code = ExitCode.CHECK_FAILED


class ConfigError(CamadaptError):
    """Raised when a configuration file or value is malformed."""

    exit_code = ExitCode.CONFIG_ERROR


class ManifestError(ConfigError):
    """Raised when a manifest or label CSV violates its schema.

    Attributes:
        line (int | None): The 1-based line in the source file, if known.
    """

    def __init__(self, message: str, line: int | None = None) -> None:
        """Initialize the ManifestError with an optional line number."""
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class ArtifactMismatchError(CamadaptError):
    """Raised when a checkpoint does not match the requested architecture."""

    exit_code = ExitCode.ARTIFACT_MISMATCH


class DatasetIOError(CamadaptError):
    """Raised when images, manifests or reports cannot be read or written."""

    exit_code = ExitCode.IO_ERROR


class DegenerateImageError(ValueError):
    """Raised when an image has no usable field-of-view content."""


class ShapeMismatchError(ValueError):
    """Raised when a tensor does not have the shape a model expects."""


class UnknownBrandError(KeyError):
    """Raised when a brand is not declared in the manifest."""


class EmptyDatasetError(ValueError):
    """Raised when a required image set is empty."""


class NonFiniteLossError(ArithmeticError):
    """Raised when a loss term evaluates to NaN or infinity."""

    def __init__(self, term: str, value: float) -> None:
        """Initialize the error with the offending term name and value."""
        self.term = term
        self.value = value
        super().__init__(f"Loss term '{term}' is not finite ({value})")


class DegenerateKappaWarning(UserWarning):
    """Quadratic weighted kappa had a zero denominator and was defined as 1.0."""


class Split(str, Enum):
    """Dataset split of an image record."""

    train = "train"
    test = "test"


class Task(str, Enum):
    """Classification task of a manifest.

    Attributes:
        grading5 (str): 5-class ordinal DR grading, labels 0-4.
        binary (str): Referable DR detection, label 1 means grade >= 2.
    """

    grading5 = "grading5"
    binary = "binary"

    @property
    def num_classes(self) -> int:
        """Number of label values of the task."""
        return 5 if self is Task.grading5 else 2


REFERABLE_GRADE = 2


@dataclass(frozen=True, slots=True)
class SynthLabel:
    """Ground truth of a synthetic fundus image.

    Attributes:
        grade (int): DR grade 0-4, equal to ``n_dark // 2``.
        n_dark (int): Number of hemorrhage blobs.
        n_bright (int): Number of exudate blobs.
        lesion_pixels (int): Pixels covered by any lesion blob.
    """

    grade: int
    n_dark: int
    n_bright: int
    lesion_pixels: int


@dataclass(frozen=True, slots=True)
class CameraFeatureVector:
    """Camera-oriented features of one image.

    Attributes:
        mi (torch.Tensor): R-G, R-B, G-B channel mutual information in nats.
        hist (torch.Tensor): Per-channel normalized histograms, shape (3, B).
        deep (torch.Tensor): Pooled classifier features, shape (n,).
        vector (torch.Tensor): Standardized concatenation of the selected blocks.
    """

    mi: torch.Tensor
    hist: torch.Tensor
    deep: torch.Tensor
    vector: torch.Tensor

    def __len__(self) -> int:
        """Length of the concatenated feature vector."""
        return int(self.vector.shape[-1])


@dataclass(frozen=True, slots=True)
class LossBreakdown:
    """Values of all objective terms at one training step.

    Attributes:
        gan_F (float): Adversarial term of F against D_B.
        gan_G (float): Adversarial term of G against D_A.
        cyc (float): Residual cycle-consistency term.
        idt (float): Identity term.
        lambda1 (float): Identity weight.
        lambda2 (float): Cycle weight.
        total (float): Weighted total of all terms.
    """

    gan_F: float  # noqa: N815
    gan_G: float  # noqa: N815
    cyc: float
    idt: float
    lambda1: float
    lambda2: float
    total: float

    def as_row(self, step: int, lr: float) -> dict[str, float | int]:
        """Return the logging row of this breakdown."""
        return {
            "step": step,
            "gan_F": self.gan_F,
            "gan_G": self.gan_G,
            "cyc": self.cyc,
            "idt": self.idt,
            "total": self.total,
            "lr": lr,
        }


class EvalResult(BaseModel):
    """One cell of an evaluation matrix.

    Attributes:
        brand (DomainId): The evaluated camera brand.
        metric_name (Literal["qwk", "auc"]): The metric of the manifest task.
        value (float): The metric value.
        n_samples (int): Number of test images.
        adapted (bool): Whether images were transformed before classification.
    """

    brand: DomainId
    metric_name: Literal["qwk", "auc"]
    value: float
    n_samples: int
    adapted: bool = False

    model_config = ConfigDict(frozen=True)

    @model_validator(mode="after")
    def _check_range(self) -> "EvalResult":
        low = -1.0 if self.metric_name == "qwk" else 0.0
        if not low <= self.value <= 1.0:
            msg = f"{self.metric_name} value {self.value} outside [{low}, 1]"
            raise ValueError(msg)
        return self
