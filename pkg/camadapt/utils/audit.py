import logging
from collections.abc import Iterable
from contextvars import ContextVar, Token

from pydantic import BaseModel, Field

from camadapt.utils.logging import LOGGING_TRACE

logger = logging.getLogger(__name__)


class Audit(BaseModel):
    """Record of label reads and consumed images within one context.

    Attributes:
        grade_reads (dict[str, int]): Number of grade field reads per brand.
        consumed (dict[str, set[str]]): Image ids consumed per training phase.
    """

    grade_reads: dict[str, int] = Field(default_factory=dict)
    consumed: dict[str, set[str]] = Field(default_factory=dict)

    def record_grade_read(self, brand: str) -> None:
        """Count one read of a grade field of a record of the given brand."""
        self.grade_reads[brand] = self.grade_reads.get(brand, 0) + 1

    def record_consumed(self, phase: str, image_ids: Iterable[str]) -> None:
        """Add image ids to the set consumed by a training phase."""
        self.consumed.setdefault(phase, set()).update(image_ids)

    def reads_of(self, brand: str) -> int:
        """Return the number of grade reads of a brand."""
        return self.grade_reads.get(brand, 0)


_current_audit: ContextVar[Audit | None] = ContextVar("current_audit", default=None)


def get_audit() -> Audit | None:
    """Get the current audit, if auditing is active.

    Returns:
        Audit | None: The current audit or None.
    """
    return _current_audit.get()


def set_audit(audit: Audit) -> Token[Audit | None]:
    """Activate an audit for the current context.

    Args:
        audit: The audit to record into.

    Returns:
        Token[Audit | None]: A token that can be used to reset the audit.
    """
    return _current_audit.set(audit)


def reset_audit(token: Token[Audit | None]) -> None:
    """Reset the audit to the previous value.

    Args:
        token: The token returned by `set_audit`.
    """
    _current_audit.reset(token)


def record_grade_read(brand: str) -> None:
    """Count a grade read in the current audit, if any."""
    audit = get_audit()
    if audit is not None:
        audit.record_grade_read(brand)


def record_consumed(phase: str, image_ids: Iterable[str]) -> None:
    """Record consumed image ids in the current audit, if any."""
    audit = get_audit()
    if audit is not None:
        audit.record_consumed(phase, image_ids)
        logger.log(LOGGING_TRACE, "Audit: phase %s consumed images", phase)
