"""Image classifiers whose pooled features also feed the camera feature extractor."""

import math
from collections.abc import Iterator
from contextlib import contextmanager
from typing import Literal, NamedTuple

import torch
from pydantic import BaseModel, ConfigDict, Field
from torch import nn
from torch.nn import functional as F
from torchvision.models import resnet50

from camadapt.types import ShapeMismatchError

RESNET50_FEATURES = 2048
_MAX_GROUPS = 8


class ClassifierConfig(BaseModel):
    """Architecture of the classifier.

    Attributes:
        arch (Literal["small", "resnet50"]): ``small`` is the desk-scale residual
            CNN, ``resnet50`` the torchvision ResNet-50 for full-resolution work.
        widths (tuple[int, ...]): Channels of each stage of the small CNN.
        blocks_per_stage (int): Residual blocks in each stage of the small CNN.
        num_classes (int): Number of logits.
        image_size (int): Input side length.
    """

    arch: Literal["small", "resnet50"] = "small"
    widths: tuple[int, ...] = Field(default=(16, 32, 64), min_length=1)
    blocks_per_stage: int = Field(default=2, ge=1)
    num_classes: int = Field(default=2, ge=2)
    image_size: int = Field(default=64, ge=8)

    model_config = ConfigDict(frozen=True, extra="forbid")

    @property
    def feature_dim(self) -> int:
        """Length ``n`` of the pooled feature vector."""
        return RESNET50_FEATURES if self.arch == "resnet50" else self.widths[-1]


def _norm(channels: int) -> nn.GroupNorm:
    return nn.GroupNorm(math.gcd(_MAX_GROUPS, channels), channels)


class BasicBlock(nn.Module):
    """Residual block of two 3x3 convolutions with group normalization."""

    def __init__(self, c_in: int, c_out: int, stride: int) -> None:
        """Initialize the block, projecting the shortcut when the shape changes."""
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1, bias=False)
        self.norm1 = _norm(c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1, bias=False)
        self.norm2 = _norm(c_out)
        self.shortcut: nn.Module = nn.Identity()
        if stride != 1 or c_in != c_out:
            self.shortcut = nn.Sequential(
                nn.Conv2d(c_in, c_out, 1, stride=stride, bias=False), _norm(c_out)
            )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Apply the block."""
        h = F.relu(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        return F.relu(h + self.shortcut(x))


def _small_backbone(config: ClassifierConfig) -> nn.Sequential:
    layers: list[nn.Module] = [
        nn.Conv2d(3, config.widths[0], 3, stride=2, padding=1, bias=False),
        _norm(config.widths[0]),
        nn.ReLU(),
    ]
    c_in = config.widths[0]
    for i, width in enumerate(config.widths):
        for j in range(config.blocks_per_stage):
            stride = 2 if i > 0 and j == 0 else 1
            layers.append(BasicBlock(c_in, width, stride))
            c_in = width
    layers += [nn.AdaptiveAvgPool2d(1), nn.Flatten()]
    return nn.Sequential(*layers)


def _resnet50_backbone() -> nn.Module:
    model = resnet50(weights=None)
    model.fc = nn.Identity()
    return model


class Classifier(nn.Module):
    """A backbone ending in global average pooling followed by a linear head.

    The small backbone uses group normalization, so forward passes have no
    running statistics and behave identically in train and eval mode.
    """

    def __init__(
        self, config: ClassifierConfig | None = None, *, seed: int = 0
    ) -> None:
        """Build the classifier and He-initialize its weights from a seed."""
        super().__init__()
        self.config = config or ClassifierConfig()
        self.backbone = (
            _resnet50_backbone()
            if self.config.arch == "resnet50"
            else _small_backbone(self.config)
        )
        self.head = nn.Linear(self.config.feature_dim, self.config.num_classes)

        generator = torch.Generator().manual_seed(seed)
        for module in self.modules():
            if isinstance(module, nn.Conv2d):
                nn.init.kaiming_normal_(
                    module.weight,
                    mode="fan_out",
                    nonlinearity="relu",
                    generator=generator,
                )
            elif isinstance(module, (nn.GroupNorm, nn.BatchNorm2d)):
                nn.init.ones_(module.weight)
                nn.init.zeros_(module.bias)
        nn.init.normal_(self.head.weight, 0.0, 0.01, generator=generator)
        nn.init.zeros_(self.head.bias)

    @property
    def feature_dim(self) -> int:
        """Length ``n`` of the pooled feature vector."""
        return self.config.feature_dim

    def _check(self, x: torch.Tensor) -> None:
        size = self.config.image_size
        if x.ndim != 4 or x.shape[1:] != (3, size, size):  # noqa: PLR2004
            msg = (
                f"Classifier expects (N, 3, {size}, {size}) input, "
                f"got {tuple(x.shape)}"
            )
            raise ShapeMismatchError(msg)

    def features(self, x: torch.Tensor) -> torch.Tensor:
        """Return the globally average-pooled features, shape (N, n)."""
        self._check(x)
        return self.backbone(x)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Return the logits, shape (N, num_classes)."""
        return self.head(self.features(x))


class ClassifierOutput(NamedTuple):
    """Logits, argmax labels and class probabilities of a batch."""

    logits: torch.Tensor
    labels: torch.Tensor
    probabilities: torch.Tensor

    @property
    def scores(self) -> torch.Tensor:
        """Positive-class probability, used as the ranking score of binary tasks."""
        return self.probabilities[:, -1]


def predict(logits: torch.Tensor) -> ClassifierOutput:
    """Turn logits into labels and softmax probabilities.

    Ties in the logits resolve to the lowest class index.
    """
    return ClassifierOutput(
        logits=logits,
        labels=torch.argmax(logits, dim=1),
        probabilities=torch.softmax(logits, dim=1),
    )


@contextmanager
def evaluating(m: nn.Module) -> Iterator[nn.Module]:
    """Put a module in eval mode for the block and restore its mode after."""
    was_training = m.training
    m.eval()
    try:
        yield m
    finally:
        m.train(was_training)


@torch.no_grad()
def classify(m: Classifier, images: torch.Tensor) -> ClassifierOutput:
    """Classify a batch of images.

    Normalization layers use their running statistics whatever the mode of
    the classifier; the mode is restored afterwards.

    Args:
        m: The classifier.
        images: Images of shape (N, 3, H, W) at the classifier's resolution.

    Returns:
        ClassifierOutput: Logits, predicted labels and probabilities.

    Raises:
        ShapeMismatchError: If the images do not match the classifier resolution.
    """
    with evaluating(m):
        return predict(m(images))
