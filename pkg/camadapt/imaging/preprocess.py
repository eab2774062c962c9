import logging
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from camadapt.manifest import Manifest, save_manifest
from camadapt.types import DatasetIOError, DegenerateImageError
from camadapt.utils.logging import LOGGING_TRACE

logger = logging.getLogger(__name__)

CONTENT_THRESHOLD = 0.02
MIN_CONTENT_FRACTION = 0.1


def normalize(raw: np.ndarray) -> np.ndarray:
    """Scale an 8-bit image to [0, 1].

    Args:
        raw: Array of shape (H, W, 3) with values in [0, 255].

    Returns:
        np.ndarray: float32 array with values ``raw / 255``.
    """
    return np.asarray(raw, dtype=np.float32) / np.float32(255.0)


def quantize(image: np.ndarray) -> np.ndarray:
    """Convert a [0, 1] image to 8-bit with rounding."""
    return np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)


def load_image(path: Path) -> np.ndarray:
    """Read a PNG or JPEG file as a normalized RGB image.

    Args:
        path: The image file.

    Returns:
        np.ndarray: float32 array of shape (H, W, 3) in [0, 1].

    Raises:
        DatasetIOError: If the file cannot be read.
    """
    try:
        with Image.open(path) as img:
            raw = np.asarray(img.convert("RGB"))
    except OSError as e:
        msg = f"Cannot read image {path}: {e}"
        raise DatasetIOError(msg) from e
    return normalize(raw)


def save_image(path: Path, image: np.ndarray) -> None:
    """Write a [0, 1] RGB image as a lossless PNG.

    Args:
        path: The destination file.
        image: Array of shape (H, W, 3).

    Raises:
        DatasetIOError: If the file cannot be written.
    """
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(quantize(image)).save(path, format="PNG")
    except OSError as e:
        msg = f"Cannot write image {path}: {e}"
        raise DatasetIOError(msg) from e


def content_bbox(
    image: np.ndarray, threshold: float = CONTENT_THRESHOLD
) -> tuple[int, int, int, int]:
    """Find the field-of-view bounding box by a row/column mean-intensity scan.

    Args:
        image: Array of shape (H, W, 3) in [0, 1].
        threshold: Minimum mean intensity of a content row or column.

    Returns:
        tuple[int, int, int, int]: ``(top, bottom, left, right)``, half-open.

    Raises:
        DegenerateImageError: If no row or column exceeds the threshold.
    """
    intensity = np.asarray(image, dtype=np.float64).mean(axis=2)
    rows = np.flatnonzero(intensity.mean(axis=1) > threshold)
    cols = np.flatnonzero(intensity.mean(axis=0) > threshold)
    if rows.size == 0 or cols.size == 0:
        msg = "Image has no content above the black-margin threshold"
        raise DegenerateImageError(msg)
    return int(rows[0]), int(rows[-1]) + 1, int(cols[0]), int(cols[-1]) + 1


def resize(image: np.ndarray, size: int) -> np.ndarray:
    """Resize an image to ``size`` x ``size`` with bilinear resampling."""
    if image.shape[0] == size and image.shape[1] == size:
        return np.asarray(image, dtype=np.float32)
    channels = []
    for c in range(image.shape[2]):
        plane = Image.fromarray(np.ascontiguousarray(image[..., c], dtype=np.float32))
        channels.append(
            np.asarray(plane.resize((size, size), Image.Resampling.BILINEAR))
        )
    return np.clip(np.stack(channels, axis=2), 0.0, 1.0).astype(np.float32)


def is_squared(
    image: np.ndarray, size: int, threshold: float = CONTENT_THRESHOLD
) -> bool:
    """Tell whether an image already is a squared frame of side ``size``.

    A squared frame has the target shape and content pixels on both borders of
    at least one axis. Rows at the rim of a resized disc can be too dim for the
    row/column scan, so this test looks at single pixels.
    """
    if image.shape[0] != size or image.shape[1] != size:
        return False
    content = np.asarray(image, dtype=np.float64).mean(axis=2) > threshold
    rows = np.flatnonzero(content.any(axis=1))
    cols = np.flatnonzero(content.any(axis=0))
    if rows.size == 0:
        return False
    spans_rows = rows[0] == 0 and rows[-1] == size - 1
    spans_cols = cols[0] == 0 and cols[-1] == size - 1
    return bool(spans_rows or spans_cols)


def square_and_resize(image: np.ndarray, target_size: int) -> np.ndarray:
    """Crop black margins, pad to a square and resize.

    The content bounding box is cropped out, the shorter side (usually the
    vertical one) is zero-padded symmetrically to make it square, and the result is
    resized bilinearly. Frames that are already squared at ``target_size`` are
    returned unchanged, so the function is idempotent on its own output.

    Args:
        image: Array of shape (H, W, 3) in [0, 1].
        target_size: Output side length in pixels.

    Returns:
        np.ndarray: float32 array of shape (target_size, target_size, 3).

    Raises:
        DegenerateImageError: If the content box covers less than 10% of the frame.
    """
    if is_squared(image, target_size):
        return np.asarray(image, dtype=np.float32)
    height, width = image.shape[:2]
    top, bottom, left, right = content_bbox(image)
    box_h, box_w = bottom - top, right - left
    if box_h * box_w < MIN_CONTENT_FRACTION * height * width:
        msg = (
            f"Content box {box_w}x{box_h} covers less than "
            f"{MIN_CONTENT_FRACTION:.0%} of the {width}x{height} frame"
        )
        raise DegenerateImageError(msg)

    content = image[top:bottom, left:right]
    side = max(box_h, box_w)
    pad_v, pad_h = side - box_h, side - box_w
    square = np.pad(
        content,
        ((pad_v // 2, pad_v - pad_v // 2), (pad_h // 2, pad_h - pad_h // 2), (0, 0)),
    )
    logger.log(
        LOGGING_TRACE,
        "Squared %dx%d frame via box %dx%d to side %d",
        width,
        height,
        box_w,
        box_h,
        side,
    )
    return resize(square, target_size)


def to_tensor(
    images: np.ndarray | list[np.ndarray], dtype: torch.dtype = torch.float32
) -> torch.Tensor:
    """Convert (H, W, 3) images to a (N, 3, H, W) tensor."""
    batch = np.stack(images) if isinstance(images, list) else np.asarray(images)
    if batch.ndim == 3:  # noqa: PLR2004
        batch = batch[None]
    return torch.from_numpy(np.ascontiguousarray(batch.transpose(0, 3, 1, 2))).to(dtype)


def to_image(tensor: torch.Tensor) -> np.ndarray:
    """Convert a (3, H, W) tensor to an (H, W, 3) float32 image."""
    return tensor.detach().cpu().permute(1, 2, 0).numpy().astype(np.float32)


def preprocess_dataset(manifest: Manifest, out_dir: Path, size: int) -> Manifest:
    """Square, resize and re-encode every image of a manifest as PNG.

    Images go to ``images/<brand>/<split>/<image_id>.png`` under ``out_dir`` and
    a rewritten ``manifest.csv`` points at them. Images without usable content
    are left out and reported.

    Args:
        manifest: The source dataset.
        out_dir: The output directory.
        size: Output side length.

    Returns:
        Manifest: The preprocessed dataset, rooted at ``out_dir``.

    Raises:
        DatasetIOError: If an image cannot be read or written.
    """
    records = []
    skipped = []
    for record in manifest.records:
        try:
            image = square_and_resize(load_image(manifest.resolve(record)), size)
        except DegenerateImageError as e:
            logger.warning("Skipping %s: %s", record.image_id, e)
            skipped.append(record.image_id)
            continue
        rel = Path("images") / record.brand / record.split.value
        rel /= f"{record.image_id}.png"
        save_image(out_dir / rel, image)
        records.append(record.model_copy(update={"path": rel}))

    result = manifest.model_copy(update={"records": tuple(records), "root": out_dir})
    save_manifest(result, out_dir / "manifest.csv")
    logger.info(
        "Preprocessed %d images to %dx%d, skipped %d",
        len(records),
        size,
        size,
        len(skipped),
    )
    return result
