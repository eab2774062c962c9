import logging
from collections.abc import Generator

import pytest
import torch

from camadapt.imaging.synth import build_synth_dataset
from camadapt.manifest import Manifest
from camadapt.models.classifier import Classifier
from camadapt.settings import Settings, reset_settings, set_settings
from camadapt.utils.audit import Audit, reset_audit, set_audit
from tests.utils.tiny import TINY_SIZE, tiny_classifier_config, tiny_synth_config


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory: pytest.TempPathFactory) -> Manifest:
    """A two-brand synthetic dataset written once per test session."""
    return build_synth_dataset(tiny_synth_config(), tmp_path_factory.mktemp("tiny"))


@pytest.fixture
def classifier() -> Classifier:
    """A fresh float64 classifier for the tiny dataset."""
    return Classifier(tiny_classifier_config(), seed=0).to(torch.float64).eval()


@pytest.fixture
def audit() -> Generator[Audit, None, None]:
    """Activate an empty audit for the duration of a test."""
    record = Audit()
    token = set_audit(record)
    try:
        yield record
    finally:
        reset_audit(token)


@pytest.fixture(autouse=True)
def _default_settings() -> Generator[None, None, None]:
    """Run every test with default settings, whatever the environment holds."""
    token = set_settings(Settings(seed=None, jobs=1, dry_run=False))
    try:
        yield
    finally:
        reset_settings(token)


@pytest.fixture
def random_images() -> torch.Tensor:
    """Eight float64 16x16 images with values in [0.2, 0.8]."""
    generator = torch.Generator().manual_seed(0)
    u = torch.rand(8, 3, TINY_SIZE, TINY_SIZE, generator=generator, dtype=torch.float64)
    return 0.2 + 0.6 * u


@pytest.fixture(autouse=True)
def _package_log_level() -> Generator[None, None, None]:
    """Undo the package log level that CLI invocations configure."""
    package = logging.getLogger("camadapt")
    level = package.level
    try:
        yield
    finally:
        package.setLevel(level)
