"""Synthetic fundus images and brand-filtered benchmark datasets."""

import logging
from pathlib import Path

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from camadapt.imaging.filters import BrandFilterParams, apply_brand_filter
from camadapt.imaging.preprocess import save_image
from camadapt.manifest import ImageRecord, Manifest, save_manifest
from camadapt.types import REFERABLE_GRADE, DomainId, Split, SynthLabel, Task

logger = logging.getLogger(__name__)

MAX_GRADE = 4
FOV_RADIUS = 0.95
LESION_RADIUS = 0.8

_BACKGROUND = np.array([0.78, 0.36, 0.16])
_DISC = np.array([0.98, 0.86, 0.55])
_HEMORRHAGE = np.array([0.30, 0.06, 0.04])
_EXUDATE = np.array([0.98, 0.90, 0.42])


def lesion_counts(grade: int, rng: np.random.Generator) -> tuple[int, int]:
    """Draw hemorrhage and exudate counts for a grade.

    Grade ``g >= 1`` draws ``n_dark`` from ``{2g, 2g + 1}`` and ``n_bright`` from
    ``{g, g + 1}``; grade 0 has no lesions. ``n_dark // 2`` recovers the grade.
    """
    if grade == 0:
        return 0, 0
    n_dark = int(rng.integers(2 * grade, 2 * grade + 2))
    n_bright = int(rng.integers(grade, grade + 2))
    return n_dark, n_bright


def _grid(size: int) -> tuple[np.ndarray, np.ndarray]:
    coords = (np.arange(size, dtype=np.float64) + 0.5) / size * 2.0 - 1.0
    yy, xx = np.meshgrid(coords, coords, indexing="ij")
    return yy, xx


def _random_point(rng: np.random.Generator, radius: float) -> tuple[float, float]:
    r = radius * np.sqrt(rng.uniform())
    theta = rng.uniform(0.0, 2.0 * np.pi)
    return r * np.sin(theta), r * np.cos(theta)


def _vessel_distance(
    yy: np.ndarray,
    xx: np.ndarray,
    start: tuple[float, float],
    rng: np.random.Generator,
) -> np.ndarray:
    theta = rng.uniform(0.0, 2.0 * np.pi)
    length = rng.uniform(0.9, 1.6)
    bend = rng.uniform(-0.5, 0.5)
    t = np.linspace(0.0, 1.0, 48)
    direction = np.array([np.sin(theta), np.cos(theta)])
    normal = np.array([direction[1], -direction[0]])
    points = (
        np.asarray(start)[None, :]
        + (t * length)[:, None] * direction[None, :]
        + (bend * t**2)[:, None] * normal[None, :]
    )
    dy = yy[..., None] - points[:, 0]
    dx = xx[..., None] - points[:, 1]
    return np.sqrt(dy**2 + dx**2).min(axis=-1)


def generate_synthetic_fundus(
    seed: int, grade: int, size: int = 64
) -> tuple[np.ndarray, SynthLabel]:
    """Render a fundus-like image with a lesion load matching a grade.

    The image has a circular field of view on a black background, a radial
    background gradient, an optic disc, dark vessel-like curves, and dark
    hemorrhage and bright exudate blobs whose counts follow `lesion_counts`.

    Args:
        seed: Seed of the image; the output is a pure function of its arguments.
        grade: Requested grade 0-4.
        size: Side length in pixels.

    Returns:
        tuple[np.ndarray, SynthLabel]: The float64 image of shape
            (size, size, 3) in [0, 1] and its label.

    Raises:
        ValueError: If the grade is outside 0-4.
    """
    if not 0 <= grade <= MAX_GRADE:
        msg = f"Invalid grade {grade}, expected 0-{MAX_GRADE}"
        raise ValueError(msg)

    rng = np.random.default_rng(seed)
    yy, xx = _grid(size)
    r2 = yy**2 + xx**2
    fov = r2 <= FOV_RADIUS**2

    tint = rng.uniform(-0.04, 0.04, size=3)
    image = (_BACKGROUND + tint)[None, None, :] * (1.0 - 0.35 * r2)[..., None]

    disc_center = (rng.uniform(-0.1, 0.1), rng.choice([-0.4, 0.4]))
    disc_d2 = (yy - disc_center[0]) ** 2 + (xx - disc_center[1]) ** 2
    disc = np.exp(-disc_d2 / (2 * 0.08**2))[..., None]
    image = image * (1.0 - disc) + _DISC[None, None, :] * disc

    for _ in range(int(rng.integers(4, 7))):
        d = _vessel_distance(yy, xx, disc_center, rng)
        width = rng.uniform(0.015, 0.03)
        image = image * (1.0 - 0.3 * np.exp(-(d**2) / (2 * width**2)))[..., None]

    n_dark, n_bright = lesion_counts(grade, rng)
    lesions = np.zeros((size, size), dtype=bool)
    for color, count, radii in (
        (_HEMORRHAGE, n_dark, (0.06, 0.10)),
        (_EXUDATE, n_bright, (0.04, 0.07)),
    ):
        for _ in range(count):
            cy, cx = _random_point(rng, LESION_RADIUS)
            radius = rng.uniform(*radii)
            blob = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2
            image[blob] = color
            lesions |= blob

    image = np.where(fov[..., None], np.clip(image, 0.0, 1.0), 0.0)
    label = SynthLabel(
        grade=n_dark // 2,
        n_dark=n_dark,
        n_bright=n_bright,
        lesion_pixels=int((lesions & fov).sum()),
    )
    return image, label


class SynthDatasetConfig(BaseModel):
    """Layout of a synthetic brand-shift dataset.

    Attributes:
        filters (dict[DomainId, BrandFilterParams]): Filter of every brand.
        source (DomainId): The labeled source brand.
        train_counts (dict[int, int]): Images per grade in each brand's train split.
        test_counts (dict[int, int]): Images per grade in each brand's test split.
        image_size (int): Side length of the generated images.
        task (Task): Label task written to the manifest.
        seed (int): Root seed of all generated images.
    """

    filters: dict[DomainId, BrandFilterParams]
    source: DomainId
    train_counts: dict[int, int] = Field(default_factory=dict)
    test_counts: dict[int, int] = Field(default_factory=dict)
    image_size: int = Field(default=64, ge=16)
    task: Task = Task.grading5
    seed: int = 0

    model_config = ConfigDict(frozen=True, extra="forbid")

    @model_validator(mode="after")
    def _check_layout(self) -> "SynthDatasetConfig":
        if len(self.filters) < 2:  # noqa: PLR2004
            msg = f"At least 2 brands are required, got {sorted(self.filters)}"
            raise ValueError(msg)
        if self.source not in self.filters:
            msg = f"Source brand {self.source!r} has no filter"
            raise ValueError(msg)
        for counts in (self.train_counts, self.test_counts):
            for grade, count in counts.items():
                if not 0 <= grade <= MAX_GRADE or count < 0:
                    msg = f"Invalid count {count} for grade {grade}"
                    raise ValueError(msg)
        return self

    def counts(self, split: Split) -> dict[int, int]:
        """Images per grade of a split."""
        return self.train_counts if split is Split.train else self.test_counts


def default_benchmark_config(seed: int = 0) -> SynthDatasetConfig:
    """Return the five-brand binary benchmark.

    Brand ``A`` is the untouched source; ``B`` is warm-shifted, ``C`` is
    cool-shifted, ``D`` is blurred and ``E`` has a vignette with sensor noise.
    Each brand has 150 train and 100 test images per binary class.
    """
    return SynthDatasetConfig(
        filters={
            "A": BrandFilterParams(),
            "B": BrandFilterParams(channel_gains=(1.25, 1.0, 0.75), seed=1),
            "C": BrandFilterParams(channel_gains=(0.8, 1.0, 1.25), seed=2),
            "D": BrandFilterParams(blur_sigma=1.5, seed=3),
            "E": BrandFilterParams(vignette_strength=0.6, noise_std=0.05, seed=4),
        },
        source="A",
        train_counts={0: 75, 1: 75, 2: 50, 3: 50, 4: 50},
        test_counts={0: 50, 1: 50, 2: 34, 3: 33, 4: 33},
        image_size=64,
        task=Task.binary,
        seed=seed,
    )


def _derive_seed(*keys: int) -> int:
    return int(np.random.SeedSequence(list(keys)).generate_state(1)[0])


def build_synth_dataset(
    config: SynthDatasetConfig, out_dir: Path, *, seed: int | None = None
) -> Manifest:
    """Generate a synthetic dataset and write its images and manifest.

    Every base image is generated once; each brand receives the same base image
    passed through its own filter, written to
    ``images/<brand>/<split>/<brand>_<split>_<index>.png`` under ``out_dir``
    together with ``manifest.csv``.

    Args:
        config: The dataset layout.
        out_dir: The output directory.
        seed: Overrides ``config.seed`` when given.

    Returns:
        Manifest: The written manifest.

    Raises:
        DatasetIOError: If an image or the manifest cannot be written.
    """
    root_seed = config.seed if seed is None else seed
    brands = sorted(config.filters)
    records: list[ImageRecord] = []

    for split_index, split in enumerate(Split):
        index = 0
        for grade, count in sorted(config.counts(split).items()):
            for _ in range(count):
                image_seed = _derive_seed(root_seed, split_index, index)
                base, label = generate_synthetic_fundus(
                    image_seed, grade, config.image_size
                )
                value = label.grade
                if config.task is Task.binary:
                    value = int(label.grade >= REFERABLE_GRADE)
                for brand in brands:
                    params = config.filters[brand]
                    noise_seed = _derive_seed(
                        params.seed, root_seed, split_index, index
                    )
                    image = apply_brand_filter(
                        base, params.model_copy(update={"seed": noise_seed})
                    )
                    image_id = f"{brand}_{split.value}_{index:05d}"
                    rel = Path("images") / brand / split.value / f"{image_id}.png"
                    save_image(out_dir / rel, image)
                    records.append(
                        ImageRecord(
                            image_id=image_id,
                            path=rel,
                            grade=value,
                            brand=brand,
                            split=split,
                        )
                    )
                index += 1
        logger.info("Generated %d %s images per brand", index, split.value)

    records.sort(key=lambda r: (r.brand, r.split is not Split.train))
    manifest = Manifest(
        records=tuple(records),
        task=config.task,
        declared_brands=frozenset(brands),
        root=out_dir,
    )
    save_manifest(manifest, out_dir / "manifest.csv")
    return manifest
