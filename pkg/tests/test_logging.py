import logging
from pathlib import Path

import pytest

from camadapt.utils.logging import LOGGING_TRACE, configure_logging, log_file

logger = logging.getLogger("camadapt.tests")


@pytest.mark.parametrize(
    ("verbose", "quiet", "level"),
    [
        (0, False, logging.WARNING),
        (1, False, logging.INFO),
        (2, False, logging.DEBUG),
        (3, False, LOGGING_TRACE),
        (2, True, logging.ERROR),
    ],
)
def test_verbosity_levels(verbose: int, *, quiet: bool, level: int) -> None:
    """Each -v raises the package verbosity; -q wins over -v."""
    configure_logging(verbose, quiet=quiet, plain=True)
    assert logging.getLogger("camadapt").level == level
    assert logging.getLevelName(LOGGING_TRACE) == "TRACE"


def test_log_file_copies_package_records(tmp_path: Path) -> None:
    """Records are appended while the context is open and not afterwards."""
    path = tmp_path / "nested" / "study.log"
    logging.getLogger("camadapt").setLevel(logging.INFO)

    with log_file(path):
        logger.info("first")
        logger.debug("hidden")
    logger.info("after")
    with log_file(path):
        logger.warning("second")

    text = path.read_text(encoding="utf-8")
    assert "INFO     camadapt.tests: first" in text
    assert "WARNING  camadapt.tests: second" in text
    assert "hidden" not in text
    assert "after" not in text
