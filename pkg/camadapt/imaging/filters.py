"""Parametric camera-brand filters for the synthetic benchmark."""

import logging
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, RootModel, field_validator
from scipy.ndimage import gaussian_filter

from camadapt.settings import load_config
from camadapt.types import DomainId

logger = logging.getLogger(__name__)

SHARPEN_SIGMA = 1.0


class BrandFilterParams(BaseModel):
    """A synthetic camera transform.

    Attributes:
        channel_gains (tuple[float, float, float]): Per-channel R, G, B gains.
        gamma (float): Power applied after the gains.
        blur_sigma (float): Gaussian blur sigma in pixels.
        sharpen_amount (float): Unsharp-mask amount.
        vignette_strength (float): Radial darkening at the frame corners.
        noise_std (float): Standard deviation of additive Gaussian noise.
        seed (int): Seed of the noise generator.
    """

    channel_gains: tuple[float, float, float] = Field(default=(1.0, 1.0, 1.0))
    gamma: float = Field(default=1.0, gt=0)
    blur_sigma: float = Field(default=0.0, ge=0)
    sharpen_amount: float = Field(default=0.0, ge=0)
    vignette_strength: float = Field(default=0.0, ge=0, le=1)
    noise_std: float = Field(default=0.0, ge=0)
    seed: int = 0

    model_config = ConfigDict(frozen=True, extra="forbid")

    @field_validator("channel_gains", mode="after")
    @classmethod
    def _positive_gains(
        cls, v: tuple[float, float, float]
    ) -> tuple[float, float, float]:
        if any(g <= 0 for g in v):
            msg = f"channel gains must be > 0, got {v}"
            raise ValueError(msg)
        return v

    @property
    def is_identity(self) -> bool:
        """Whether the filter leaves every image unchanged."""
        return self.model_copy(update={"seed": 0}) == BrandFilterParams()


class FilterBank(RootModel[dict[DomainId, BrandFilterParams]]):
    """Mapping of brand to its filter, loadable from a JSON file."""

    root: dict[DomainId, BrandFilterParams]

    @classmethod
    def load(cls, path: Path) -> "FilterBank":
        """Load a filter bank JSON file."""
        return load_config(path, cls)


def _vignette(height: int, width: int, strength: float) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    cy, cx = (height - 1) / 2, (width - 1) / 2
    r2 = ((yy - cy) ** 2 + (xx - cx) ** 2) / (cy**2 + cx**2 or 1.0)
    return 1.0 - strength * r2


def _spatial_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    return gaussian_filter(image, sigma=(sigma, sigma, 0), mode="constant")


def apply_brand_filter(image: np.ndarray, params: BrandFilterParams) -> np.ndarray:
    """Apply a brand filter to an image.

    Steps run in a fixed order: per-channel gain, gamma, Gaussian blur,
    unsharp-mask sharpening, radial vignette, seeded additive noise, clamp.

    Args:
        image: Array of shape (H, W, 3) in [0, 1].
        params: The filter parameters.

    Returns:
        np.ndarray: The filtered image, float64 in [0, 1].
    """
    out = np.asarray(image, dtype=np.float64) * np.asarray(params.channel_gains)
    if params.gamma != 1.0:
        out = np.power(np.clip(out, 0.0, None), params.gamma)
    if params.blur_sigma > 0:
        out = _spatial_blur(out, params.blur_sigma)
    if params.sharpen_amount > 0:
        out = out + params.sharpen_amount * (out - _spatial_blur(out, SHARPEN_SIGMA))
    if params.vignette_strength > 0:
        out = out * _vignette(*out.shape[:2], params.vignette_strength)[..., None]
    if params.noise_std > 0:
        rng = np.random.default_rng(params.seed)
        out = out + rng.normal(0.0, params.noise_std, size=out.shape)
    return np.clip(out, 0.0, 1.0)
