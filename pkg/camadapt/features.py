"""Camera features: channel mutual information, color histograms, deep features.

Hard-binned features count pixels into ``bins`` equal bins over [0, 1]; bin ``i``
covers ``[i/B, (i+1)/B)`` and the last bin is closed. Soft-binned features use a
triangular kernel centered on ``(i + 0.5)/B`` so that gradients reach the pixels.
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import pandas as pd
import torch
from pydantic import BaseModel, ConfigDict, Field, field_validator

from camadapt.models.classifier import Classifier, evaluating
from camadapt.types import (
    CameraFeatureVector,
    DatasetIOError,
    FeatureBlock,
    FeatureMode,
    ShapeMismatchError,
)
from camadapt.utils.logging import LOGGING_TRACE

logger = logging.getLogger(__name__)

CHANNEL_PAIRS = ((0, 1), (0, 2), (1, 2))
STD_FLOOR = 1e-6
_LOG_FLOOR = 1e-12
_BLOCK_ORDER: tuple[FeatureBlock, ...] = ("mi", "hist", "deep")


class FeatureConfig(BaseModel):
    """Camera feature layout.

    Attributes:
        bins (int): Bins of the histograms and of the joint MI histograms.
        blocks (tuple[FeatureBlock, ...]): Feature blocks concatenated into the
            vector, always in the order mi, hist, deep.
    """

    bins: int = Field(default=16, ge=2)
    blocks: tuple[FeatureBlock, ...] = _BLOCK_ORDER

    model_config = ConfigDict(frozen=True, extra="forbid")

    @field_validator("blocks", mode="after")
    @classmethod
    def _canonical_blocks(
        cls, v: tuple[FeatureBlock, ...]
    ) -> tuple[FeatureBlock, ...]:
        if not v:
            msg = "At least one feature block is required"
            raise ValueError(msg)
        return tuple(b for b in _BLOCK_ORDER if b in v)

    def width(self, deep_dim: int) -> int:
        """Length of the concatenated vector for a classifier feature size."""
        sizes = {"mi": len(CHANNEL_PAIRS), "hist": 3 * self.bins, "deep": deep_dim}
        return sum(sizes[b] for b in self.blocks)


def _as_batch(images: torch.Tensor) -> tuple[torch.Tensor, bool]:
    if images.ndim == 3:  # noqa: PLR2004
        images = images.unsqueeze(0)
        single = True
    else:
        single = False
    if images.ndim != 4 or images.shape[1] != 3:  # noqa: PLR2004
        msg = (
            "Expected a (3, H, W) image or (N, 3, H, W) batch, "
            f"got {tuple(images.shape)}"
        )
        raise ShapeMismatchError(msg)
    return images, single


def _unbatch(t: torch.Tensor, single: bool) -> torch.Tensor:  # noqa: FBT001
    return t[0] if single else t


def _hard_bins(pixels: torch.Tensor, bins: int) -> torch.Tensor:
    return torch.clamp(torch.floor(pixels * bins), 0, bins - 1).long()


def _plogp(p: torch.Tensor) -> torch.Tensor:
    return p * torch.log(p.clamp_min(_LOG_FLOOR))


def _entropy(p: torch.Tensor) -> torch.Tensor:
    return -_plogp(p).sum(dim=-1)


def _joint_entropy(joint: torch.Tensor) -> torch.Tensor:
    # sorted so that swapping the two channels gives bit-identical sums
    terms = _plogp(joint.flatten(1))
    return -torch.sort(terms, dim=1).values.sum(dim=1)


def _mutual_information(
    marginals: torch.Tensor, joints: list[torch.Tensor]
) -> torch.Tensor:
    h = _entropy(marginals)
    return torch.stack(
        [
            h[:, i] + h[:, j] - _joint_entropy(joint)
            for (i, j), joint in zip(CHANNEL_PAIRS, joints, strict=True)
        ],
        dim=1,
    )


def _hard_histograms(x: torch.Tensor, bins: int) -> tuple[torch.Tensor, torch.Tensor]:
    n, c, h, w = x.shape
    idx = _hard_bins(x.reshape(n, c, h * w), bins)
    offsets = (torch.arange(n * c, device=x.device) * bins).view(n, c, 1)
    counts = torch.bincount((idx + offsets).flatten(), minlength=n * c * bins)
    return counts.view(n, c, bins).to(x.dtype) / (h * w), idx


def normalized_color_histogram(images: torch.Tensor, bins: int = 16) -> torch.Tensor:
    """Per-channel hard-binned histogram normalized by the pixel count.

    Args:
        images: A (3, H, W) image or (N, 3, H, W) batch in [0, 1].
        bins: Number of bins.

    Returns:
        torch.Tensor: Shape (3, bins) or (N, 3, bins); each channel sums to 1.
    """
    x, single = _as_batch(images)
    hist, _ = _hard_histograms(x, bins)
    return _unbatch(hist, single)


def soft_bin_weights(pixels: torch.Tensor, bins: int) -> torch.Tensor:
    """Triangular-kernel weights of each value for each bin center.

    Each value splits its unit mass linearly between its two nearest bin centers;
    values outside the outermost centers go entirely to the outermost bin.

    Args:
        pixels: Values in [0, 1] of any shape.
        bins: Number of bins.

    Returns:
        torch.Tensor: Shape ``pixels.shape + (bins,)``.
    """
    u = torch.clamp(pixels * bins - 0.5, 0.0, bins - 1.0)
    centers = torch.arange(bins, dtype=pixels.dtype, device=pixels.device)
    return torch.relu(1.0 - torch.abs(u.unsqueeze(-1) - centers))


def soft_color_histogram(images: torch.Tensor, bins: int = 16) -> torch.Tensor:
    """Differentiable per-channel histogram with triangular soft binning.

    Args:
        images: A (3, H, W) image or (N, 3, H, W) batch in [0, 1].
        bins: Number of bins.

    Returns:
        torch.Tensor: Shape (3, bins) or (N, 3, bins); each channel sums to 1.
    """
    x, single = _as_batch(images)
    n, c, h, w = x.shape
    weights = soft_bin_weights(x.reshape(n, c, h * w), bins)
    return _unbatch(weights.mean(dim=2), single)


def channel_mutual_information(images: torch.Tensor, bins: int = 16) -> torch.Tensor:
    """Mutual information of the R-G, R-B and G-B channel pairs in nats.

    The plug-in estimate on the hard-binned joint histogram of co-located pixel
    values, with ``0 log 0 = 0``.

    Args:
        images: A (3, H, W) image or (N, 3, H, W) batch in [0, 1].
        bins: Number of bins per channel.

    Returns:
        torch.Tensor: Shape (3,) or (N, 3), all entries >= 0.
    """
    x, single = _as_batch(images)
    n, _, h, w = x.shape
    hist, idx = _hard_histograms(x, bins)
    offsets = (torch.arange(n, device=x.device) * bins * bins).view(n, 1)
    joints = []
    for i, j in CHANNEL_PAIRS:
        codes = idx[:, i] * bins + idx[:, j] + offsets
        counts = torch.bincount(codes.flatten(), minlength=n * bins * bins)
        joints.append(counts.view(n, bins, bins).to(x.dtype) / (h * w))
    mi = _mutual_information(hist, joints).clamp_min(0.0)
    return _unbatch(mi, single)


def soft_channel_mutual_information(
    images: torch.Tensor, bins: int = 16
) -> torch.Tensor:
    """Differentiable channel mutual information from soft joint histograms.

    Args:
        images: A (3, H, W) image or (N, 3, H, W) batch in [0, 1].
        bins: Number of bins per channel.

    Returns:
        torch.Tensor: Shape (3,) or (N, 3).
    """
    x, single = _as_batch(images)
    n, c, h, w = x.shape
    weights = soft_bin_weights(x.reshape(n, c, h * w), bins)
    joints = [
        torch.einsum("npa,npb->nab", weights[:, i], weights[:, j]) / (h * w)
        for i, j in CHANNEL_PAIRS
    ]
    mi = _mutual_information(weights.mean(dim=2), joints)
    return _unbatch(mi, single)


def deep_features(classifier: Classifier, images: torch.Tensor) -> torch.Tensor:
    """Globally average-pooled penultimate activations of the classifier.

    Gradients flow to the images; the classifier is only read and runs in eval
    mode. Images are cast to the dtype of the classifier parameters.

    Args:
        classifier: The classifier.
        images: A (3, H, W) image or (N, 3, H, W) batch at its input resolution.

    Returns:
        torch.Tensor: Shape (n,) or (N, n).

    Raises:
        ShapeMismatchError: If the image resolution does not match the classifier.
    """
    x, single = _as_batch(images)
    dtype = next(classifier.parameters()).dtype
    with evaluating(classifier):
        return _unbatch(classifier.features(x.to(dtype)), single)


@dataclass(frozen=True)
class FeatureStats:
    """Frozen per-dimension standardization statistics of camera feature vectors."""

    mean: torch.Tensor
    std: torch.Tensor

    @classmethod
    def from_vectors(cls, raw: torch.Tensor) -> "FeatureStats":
        """Two-pass population mean and standard deviation, std floored at 1e-6."""
        raw = raw.detach().to(torch.float64)
        mean = raw.mean(dim=0)
        std = ((raw - mean) ** 2).mean(dim=0).sqrt().clamp_min(STD_FLOOR)
        return cls(mean=mean, std=std)

    @classmethod
    def unit(cls, width: int) -> "FeatureStats":
        """Statistics that leave vectors unchanged."""
        return cls(
            mean=torch.zeros(width, dtype=torch.float64),
            std=torch.ones(width, dtype=torch.float64),
        )

    @property
    def width(self) -> int:
        """Vector length the statistics apply to."""
        return int(self.mean.shape[0])

    def standardize(self, raw: torch.Tensor) -> torch.Tensor:
        """Map raw vectors to zero mean and unit spread."""
        if raw.shape[-1] != self.width:
            msg = f"Feature width {raw.shape[-1]} does not match stats {self.width}"
            raise ShapeMismatchError(msg)
        return (raw - self.mean.to(raw)) / self.std.to(raw)


class CameraFeatureExtractor:
    """The fixed camera feature extractor f used by the discriminators.

    The classifier is only read; its parameter values and ``requires_grad``
    flags stay as the caller set them.
    """

    def __init__(
        self,
        classifier: Classifier,
        config: FeatureConfig | None = None,
        stats: FeatureStats | None = None,
    ) -> None:
        """Initialize the extractor.

        Args:
            classifier: Source of the deep features.
            config: The feature layout; defaults to `FeatureConfig()`.
            stats: Standardization statistics; defaults to unit statistics.
        """
        self.classifier = classifier
        self.config = config or FeatureConfig()
        self.width = self.config.width(classifier.feature_dim)
        self.stats = stats or FeatureStats.unit(self.width)
        if self.stats.width != self.width:
            msg = (
                f"Statistics width {self.stats.width} does not match "
                f"feature width {self.width}"
            )
            raise ShapeMismatchError(msg)

    def with_stats(self, stats: FeatureStats) -> "CameraFeatureExtractor":
        """Return an extractor with the same classifier and new statistics."""
        return CameraFeatureExtractor(self.classifier, self.config, stats)

    def __call__(
        self, images: torch.Tensor, mode: FeatureMode = "hard"
    ) -> CameraFeatureVector:
        """Extract standardized camera features of a batch.

        Args:
            images: A (N, 3, H, W) batch in [0, 1].
            mode: ``hard`` for counting bins, ``soft`` for differentiable bins.

        Returns:
            CameraFeatureVector: Blocks of shape (N, 3), (N, 3, B), (N, n) and the
                standardized vector of shape (N, width). Unselected blocks are
                empty.
        """
        x, _ = _as_batch(images)
        n = x.shape[0]
        bins = self.config.bins
        blocks = self.config.blocks
        empty = x.new_zeros((n, 0))

        if mode == "soft":
            mi = soft_channel_mutual_information(x, bins) if "mi" in blocks else empty
            hist = soft_color_histogram(x, bins) if "hist" in blocks else empty
        else:
            mi = channel_mutual_information(x, bins) if "mi" in blocks else empty
            hist = normalized_color_histogram(x, bins) if "hist" in blocks else empty
        deep = deep_features(self.classifier, x) if "deep" in blocks else empty

        raw = torch.cat([mi, hist.flatten(1), deep.to(x.dtype)], dim=1)
        logger.log(LOGGING_TRACE, "Extracted %s features of shape %s", mode, raw.shape)
        return CameraFeatureVector(
            mi=mi, hist=hist, deep=deep, vector=self.stats.standardize(raw)
        )

    def raw(self, images: torch.Tensor) -> torch.Tensor:
        """Hard-mode vectors before standardization."""
        return self.with_stats(FeatureStats.unit(self.width))(images).vector


def camera_feature(
    images: torch.Tensor,
    classifier: Classifier,
    mode: FeatureMode = "hard",
    *,
    config: FeatureConfig | None = None,
    stats: FeatureStats | None = None,
) -> CameraFeatureVector:
    """Compute camera feature vectors ``[mi | hist | deep]`` of a batch.

    See `CameraFeatureExtractor.__call__`.
    """
    return CameraFeatureExtractor(classifier, config, stats)(images, mode)


def export_features(
    image_ids: Sequence[str],
    vectors: torch.Tensor,
    path: Path,
) -> pd.DataFrame:
    """Write feature vectors as CSV rows of ``image_id`` followed by the values.

    Args:
        image_ids: One id per row of ``vectors``.
        vectors: Tensor of shape (N, D).
        path: The destination CSV; value columns are named ``f0 .. f{D-1}``.

    Returns:
        pd.DataFrame: The written table.

    Raises:
        DatasetIOError: If the file cannot be written.
    """
    if len(image_ids) != vectors.shape[0]:
        msg = f"{len(image_ids)} ids for {vectors.shape[0]} feature vectors"
        raise ValueError(msg)
    values = vectors.detach().cpu().to(torch.float64).numpy()
    frame = pd.DataFrame(values, columns=[f"f{i}" for i in range(values.shape[1])])
    frame.insert(0, "image_id", list(image_ids))
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        frame.to_csv(path, index=False, lineterminator="\n")
    except OSError as e:
        msg = f"Cannot write features {path}: {e}"
        raise DatasetIOError(msg) from e
    logger.info("Exported %d feature vectors to %s", len(frame), path)
    return frame
