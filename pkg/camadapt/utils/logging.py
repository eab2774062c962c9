import logging
from collections.abc import Iterator
from contextlib import contextmanager
from pathlib import Path

LOGGING_TRACE = 5

PLAIN_FORMAT = "[%(asctime)s] %(levelname)-8s %(name)s: %(message)s"
PLAIN_DATEFMT = "%Y-%m-%d %H:%M:%S"

_PACKAGE_LOGGER = "camadapt"
_NOISY_LOGGERS = ("PIL", "matplotlib")


def _level(verbose: int, *, quiet: bool) -> int:
    if quiet:
        return logging.ERROR
    if verbose == 1:
        return logging.INFO
    if verbose == 2:  # noqa: PLR2004
        return logging.DEBUG
    if verbose > 2:  # noqa: PLR2004
        return LOGGING_TRACE
    return logging.WARNING


def _console_handler(*, plain: bool) -> logging.Handler:
    if not plain:
        try:
            from rich.console import Console
            from rich.logging import RichHandler
        except ImportError:
            pass
        else:
            handler = RichHandler(console=Console(stderr=True), rich_tracebacks=True)
            handler.setFormatter(logging.Formatter("%(message)s", datefmt="[%X]"))
            return handler

    handler = logging.StreamHandler()
    handler.setFormatter(logging.Formatter(PLAIN_FORMAT, datefmt=PLAIN_DATEFMT))
    return handler


def configure_logging(verbose: int, *, quiet: bool, plain: bool) -> None:
    """Configure logging based on verbosity level.

    Third-party loggers stay at WARNING (ERROR with ``quiet``); the package
    logger follows the verbosity. All handlers write to stderr so that stdout
    stays free for command output.
    """
    logging.addLevelName(LOGGING_TRACE, "TRACE")
    for name in _NOISY_LOGGERS:
        logging.getLogger(name).setLevel(logging.WARNING)

    logging.basicConfig(
        level=logging.ERROR if quiet else logging.WARNING,
        handlers=[_console_handler(plain=plain)],
    )
    logging.getLogger(_PACKAGE_LOGGER).setLevel(_level(verbose, quiet=quiet))


@contextmanager
def log_file(path: Path, level: int = logging.INFO) -> Iterator[Path]:
    """Copy package log records to a plain-text file while the context is open.

    The file is appended to, so reruns of a study keep their earlier history.

    Args:
        path: The log file; its directory is created if needed.
        level: Minimum level of the copied records.

    Yields:
        Path: The log file.
    """
    path.parent.mkdir(parents=True, exist_ok=True)
    handler = logging.FileHandler(path, mode="a", encoding="utf-8")
    handler.setLevel(level)
    handler.setFormatter(logging.Formatter(PLAIN_FORMAT, datefmt=PLAIN_DATEFMT))
    package = logging.getLogger(_PACKAGE_LOGGER)
    package.addHandler(handler)
    try:
        yield path
    finally:
        package.removeHandler(handler)
        handler.close()
