"""Image preprocessing, brand filters and the synthetic fundus benchmark."""

from camadapt.imaging.filters import BrandFilterParams, FilterBank, apply_brand_filter
from camadapt.imaging.preprocess import (
    load_image,
    normalize,
    preprocess_dataset,
    save_image,
    square_and_resize,
)
from camadapt.imaging.synth import (
    SynthDatasetConfig,
    build_synth_dataset,
    default_benchmark_config,
    generate_synthetic_fundus,
)

__all__ = [
    "BrandFilterParams",
    "FilterBank",
    "SynthDatasetConfig",
    "apply_brand_filter",
    "build_synth_dataset",
    "default_benchmark_config",
    "generate_synthetic_fundus",
    "load_image",
    "normalize",
    "preprocess_dataset",
    "save_image",
    "square_and_resize",
]
