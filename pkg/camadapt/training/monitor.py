"""Convergence monitoring: before/after grids and a histogram divergence proxy."""

import logging
from collections.abc import Callable
from dataclasses import dataclass
from pathlib import Path

import torch
from torchvision.utils import make_grid

from camadapt.features import normalized_color_histogram
from camadapt.imaging.preprocess import save_image, to_image
from camadapt.models.generator import transform

logger = logging.getLogger(__name__)

GRID_PADDING = 2


@dataclass(frozen=True, slots=True)
class MonitorSnapshot:
    """Divergence of the monitor set at one step, with the grid file if written."""

    step: int
    divergence: float
    path: Path | None = None


def histogram_divergence(
    reference: torch.Tensor, images: torch.Tensor, bins: int
) -> float:
    """L1 distance between a reference histogram and the mean histogram of images.

    Args:
        reference: Mean per-channel histogram of shape (3, bins).
        images: Batch of shape (N, 3, H, W).
        bins: Number of bins.

    Returns:
        float: Sum of absolute bin differences over all channels.
    """
    mean_hist = normalized_color_histogram(images, bins).mean(dim=0)
    return float((mean_hist.to(reference) - reference).abs().sum())


def monitor_grid(before: torch.Tensor, after: torch.Tensor) -> torch.Tensor:
    """Tile k images in two rows, originals above their transformations."""
    return make_grid(
        torch.cat([before, after]).detach().float().clamp(0.0, 1.0),
        nrow=before.shape[0],
        padding=GRID_PADDING,
    )


def residue_heatmap(residue: torch.Tensor) -> torch.Tensor:
    """Map a residue from [-1, 1] to [0, 1] for display."""
    return ((residue + 1.0) / 2.0).clamp(0.0, 1.0)


@torch.no_grad()
def generator_snapshot(  # noqa: PLR0913
    gen: Callable[[torch.Tensor], torch.Tensor],
    fixed_images: torch.Tensor,
    source_histogram: torch.Tensor,
    bins: int,
    step: int,
    path: Path | None = None,
) -> MonitorSnapshot:
    """Transform the fixed monitor images and record how close they are to the source.

    Args:
        gen: The target-to-source generator.
        fixed_images: The monitor set, chosen once per run.
        source_histogram: Mean hard histogram of the source train images.
        bins: Number of histogram bins.
        step: The training step.
        path: Where to write the before/after grid PNG, if anywhere.

    Returns:
        MonitorSnapshot: The divergence and the grid path.
    """
    after, _ = transform(gen, fixed_images)
    divergence = histogram_divergence(source_histogram, after, bins)
    if path is not None and fixed_images.shape[0] > 0:
        save_image(path, to_image(monitor_grid(fixed_images, after)))
        logger.info("Wrote monitor grid %s (divergence %.4f)", path, divergence)
    return MonitorSnapshot(step=step, divergence=divergence, path=path)
