"""Feature-space discriminators."""

import torch
from pydantic import BaseModel, ConfigDict, Field
from torch import nn

from camadapt.models.generator import INIT_STD, LEAKY_SLOPE
from camadapt.types import CameraFeatureVector, ShapeMismatchError


class DiscriminatorConfig(BaseModel):
    """Architecture of a discriminator apart from its input width."""

    hidden: int = Field(default=256, ge=1)

    model_config = ConfigDict(frozen=True, extra="forbid")


class Discriminator(nn.Module):
    """Two fully connected layers with a leaky ReLU and a sigmoid output."""

    def __init__(
        self,
        in_features: int,
        config: DiscriminatorConfig | None = None,
        *,
        seed: int = 0,
    ) -> None:
        """Build a discriminator for feature vectors of a given width.

        Args:
            in_features: Width of the camera feature vector.
            config: The architecture; defaults to `DiscriminatorConfig()`.
            seed: Seed of the weight initialization.
        """
        super().__init__()
        self.config = config or DiscriminatorConfig()
        self.in_features = in_features
        self.fc1 = nn.Linear(in_features, self.config.hidden)
        self.act = nn.LeakyReLU(LEAKY_SLOPE)
        self.fc2 = nn.Linear(self.config.hidden, 1)

        generator = torch.Generator().manual_seed(seed)
        for layer in (self.fc1, self.fc2):
            nn.init.normal_(layer.weight, 0.0, INIT_STD, generator=generator)
            nn.init.zeros_(layer.bias)

    def logits(self, features: torch.Tensor) -> torch.Tensor:
        """Return the pre-sigmoid score of each feature vector."""
        if features.shape[-1] != self.in_features:
            msg = (
                f"Feature width {features.shape[-1]} does not match "
                f"discriminator input width {self.in_features}"
            )
            raise ShapeMismatchError(msg)
        return self.fc2(self.act(self.fc1(features))).squeeze(-1)

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        """Return the probability that each feature vector is from the real domain."""
        return torch.sigmoid(self.logits(features))


def discriminate(
    d: Discriminator, fv: CameraFeatureVector | torch.Tensor
) -> torch.Tensor:
    """Score camera feature vectors with a discriminator."""
    return d(fv.vector if isinstance(fv, CameraFeatureVector) else fv)
