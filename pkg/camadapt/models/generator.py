"""Residual generators: an image-to-image network that emits an additive residue."""

from collections.abc import Callable

import torch
from pydantic import BaseModel, ConfigDict, Field, model_validator
from torch import nn

from camadapt.types import ShapeMismatchError

DOWNSAMPLING_STAGES = 4
SIZE_MULTIPLE = 2**DOWNSAMPLING_STAGES
LEAKY_SLOPE = 0.2
INIT_STD = 0.02

type ResidueFn = Callable[[torch.Tensor], torch.Tensor]


class GeneratorConfig(BaseModel):
    """Architecture of a residual generator.

    Attributes:
        base_width (int): Channels after the first encoder stage; doubled per stage.
        residual_blocks (int): Number of residual blocks at the bottleneck.
        image_size (int): Image side length the generator is trained at.
    """

    base_width: int = Field(default=16, ge=1)
    residual_blocks: int = Field(default=8, ge=0)
    image_size: int = Field(default=64, ge=SIZE_MULTIPLE)

    model_config = ConfigDict(frozen=True, extra="forbid")

    @model_validator(mode="after")
    def _check_size(self) -> "GeneratorConfig":
        if self.image_size % SIZE_MULTIPLE:
            msg = f"image_size {self.image_size} is not divisible by {SIZE_MULTIPLE}"
            raise ValueError(msg)
        return self


class InstanceNorm(nn.Module):
    """Per-sample, per-channel standardization over the spatial axes.

    Statistics come from the current input only; there are no running averages
    and no affine parameters. Unlike `torch.nn.InstanceNorm2d` this accepts 1x1
    feature maps in training mode, which 16x16 inputs reach at the bottleneck.
    """

    def __init__(self, eps: float = 1e-5) -> None:
        """Initialize the normalization with a variance floor."""
        super().__init__()
        self.eps = eps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Normalize each (sample, channel) plane to zero mean and unit variance."""
        var, mean = torch.var_mean(x, dim=(2, 3), keepdim=True, correction=0)
        return (x - mean) * torch.rsqrt(var + self.eps)


def _stage(conv: nn.Module) -> nn.Sequential:
    return nn.Sequential(conv, nn.LeakyReLU(LEAKY_SLOPE), InstanceNorm())


class ResidualBlock(nn.Module):
    """Two 3x3 convolutions with an identity shortcut."""

    def __init__(self, channels: int) -> None:
        """Initialize the block for a channel count."""
        super().__init__()
        self.body = nn.Sequential(
            nn.Conv2d(channels, channels, 3, padding=1),
            nn.LeakyReLU(LEAKY_SLOPE),
            InstanceNorm(),
            nn.Conv2d(channels, channels, 3, padding=1),
            InstanceNorm(),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Add the block's output to its input."""
        return x + self.body(x)


class ResidualGenerator(nn.Module):
    """Encoder, residual trunk and decoder producing a bounded residue.

    The encoder has four stride-2 3x3 convolutions with widths ``w, 2w, 4w, 8w``,
    the trunk holds the residual blocks at ``8w`` and the decoder mirrors the
    encoder with stride-2 transposed convolutions. Every convolution is followed
    by a leaky ReLU and instance normalization. A zero-initialized 3x3 head with
    tanh maps to a 3-channel residue in [-1, 1], so a fresh generator is the
    identity transform.
    """

    def __init__(self, config: GeneratorConfig | None = None, *, seed: int = 0) -> None:
        """Build the generator and initialize its weights from a seed.

        Args:
            config: The architecture; defaults to `GeneratorConfig()`.
            seed: Seed of the weight initialization.
        """
        super().__init__()
        self.config = config or GeneratorConfig()
        w = self.config.base_width
        widths = [w * 2**i for i in range(DOWNSAMPLING_STAGES)]

        self.encoder = nn.Sequential(
            *(
                _stage(nn.Conv2d(c_in, c_out, 3, stride=2, padding=1))
                for c_in, c_out in zip([3, *widths[:-1]], widths, strict=True)
            )
        )
        self.trunk = nn.Sequential(
            *(ResidualBlock(widths[-1]) for _ in range(self.config.residual_blocks))
        )
        up = [*reversed(widths), w]
        self.decoder = nn.Sequential(
            *(
                _stage(nn.ConvTranspose2d(c_in, c_out, 4, stride=2, padding=1))
                for c_in, c_out in zip(up[:-1], up[1:], strict=True)
            )
        )
        self.head = nn.Conv2d(w, 3, 3, padding=1)
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int = 0) -> None:
        """Draw convolution weights from N(0, 0.02) and zero the residue head."""
        generator = torch.Generator().manual_seed(seed)
        for module in self.modules():
            if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d)):
                nn.init.normal_(module.weight, 0.0, INIT_STD, generator=generator)
                if module.bias is not None:
                    nn.init.zeros_(module.bias)
        nn.init.zeros_(self.head.weight)
        if self.head.bias is not None:
            nn.init.zeros_(self.head.bias)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Compute the residue of a batch of images.

        Args:
            x: Images of shape (N, 3, H, W) with H and W divisible by 16.

        Returns:
            torch.Tensor: The residue, same shape as ``x``, values in [-1, 1].

        Raises:
            ShapeMismatchError: If the input is not a 3-channel batch with sides
                divisible by 16.
        """
        if x.ndim != 4 or x.shape[1] != 3:  # noqa: PLR2004
            msg = f"Expected a (N, 3, H, W) batch, got shape {tuple(x.shape)}"
            raise ShapeMismatchError(msg)
        if x.shape[2] % SIZE_MULTIPLE or x.shape[3] % SIZE_MULTIPLE:
            msg = (
                f"Image size {x.shape[2]}x{x.shape[3]} is not divisible "
                f"by {SIZE_MULTIPLE}"
            )
            raise ShapeMismatchError(msg)
        h = self.decoder(self.trunk(self.encoder(x)))
        return torch.tanh(self.head(h))


def generator_forward(gen: ResidueFn, images: torch.Tensor) -> torch.Tensor:
    """Return the residue a generator adds to a batch of images."""
    return gen(images)


def transform(
    gen: ResidueFn, images: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """Apply a residual transformation ``x + gen(x)``.

    Args:
        gen: The generator, or any callable returning a residue.
        images: Images of shape (N, 3, H, W) in [0, 1].

    Returns:
        tuple[torch.Tensor, torch.Tensor]: The transformed images clamped to
            [0, 1] and the unclamped residue.
    """
    residue = gen(images)
    return (images + residue).clamp(0.0, 1.0), residue
