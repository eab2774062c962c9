"""Image tensors and seeded batch loaders for training."""

import logging
from collections.abc import Sequence

import torch
from torch.utils.data import DataLoader, TensorDataset

from camadapt.imaging.preprocess import load_image, resize, to_tensor
from camadapt.manifest import ImageRecord, Manifest
from camadapt.types import EmptyDatasetError
from camadapt.utils.audit import record_consumed

logger = logging.getLogger(__name__)


def load_images(
    manifest: Manifest,
    records: Sequence[ImageRecord],
    image_size: int,
    *,
    phase: str,
) -> torch.Tensor:
    """Load the images of records as a (N, 3, S, S) float32 tensor.

    Images at another resolution are resized bilinearly. The record ids are
    registered as consumed by ``phase`` in the active audit. Grades are not read.

    Raises:
        EmptyDatasetError: If there are no records.
    """
    if not records:
        msg = f"No images to load for {phase}"
        raise EmptyDatasetError(msg)
    images = []
    for record in records:
        image = load_image(manifest.resolve(record))
        if image.shape[:2] != (image_size, image_size):
            image = resize(image, image_size)
        images.append(image)
    record_consumed(phase, (r.image_id for r in records))
    logger.debug("Loaded %d images for %s", len(images), phase)
    return to_tensor(images)


def load_labels(records: Sequence[ImageRecord]) -> torch.Tensor:
    """Return the grades of records as a long tensor."""
    return torch.tensor([r.grade for r in records], dtype=torch.long)


def seeded_loader(
    *tensors: torch.Tensor, batch_size: int, seed: int, shuffle: bool = True
) -> DataLoader:
    """Single-worker loader whose batch order is determined by a seed."""
    dataset = TensorDataset(*tensors)
    return DataLoader(
        dataset,
        batch_size=batch_size,
        shuffle=shuffle,
        generator=torch.Generator().manual_seed(seed),
        num_workers=0,
        drop_last=shuffle and len(dataset) > batch_size,
    )
