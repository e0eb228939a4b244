"""
Exception classes for unified error handling across difflab.

Every error carries a stable error code, a human-readable message, optional
details and the exit status the `difflab` management command returns for it.
Integration with Sentry for error monitoring and tracking.
"""

from __future__ import annotations

import logging
from typing import Any, Dict, Optional

logger = logging.getLogger(__name__)

# Import Sentry monitoring functions (graceful degradation if not available)
try:
    from apps.core.monitoring import add_breadcrumb, capture_exception

    SENTRY_AVAILABLE = True
except ImportError:  # pragma: no cover - sentry-sdk is a runtime dependency
    SENTRY_AVAILABLE = False
    logger.warning("Sentry monitoring not available in exceptions")

    def capture_exception(*args: Any, **kwargs: Any) -> Optional[str]:  # type: ignore[misc]
        return None

    def add_breadcrumb(*args: Any, **kwargs: Any) -> None:  # type: ignore[misc]
        pass


EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


class DiffLabError(Exception):
    """
    Base exception class for all difflab errors.

    Provides common structure for error reports including error code,
    human-readable message, optional details and the CLI exit status.
    """

    def __init__(self, message: str, details: dict[str, Any] | None = None):
        """
        Initialize base error.

        PARAMETERS:
          message: str - Human-readable error message - Not empty
          details: dict | None - Additional error details - Optional

        GUARANTEES:
          - error_code and exit_code are set by subclass
          - details dictionary is always a dict
        """
        super().__init__(message)
        self.message = message
        self.details = details or {}

    @property
    def error_code(self) -> str:
        """
        Return error code for this exception type.

        RETURNS:
          str - Error code identifier - Not empty
        """
        raise NotImplementedError("Subclasses must implement error_code")

    @property
    def exit_code(self) -> int:
        """
        Return the process exit status for this exception type.

        RETURNS:
          int - 2 validation, 3 numerical failure, 4 I/O
        """
        raise NotImplementedError("Subclasses must implement exit_code")

    def to_dict(self) -> dict[str, Any]:
        """Serializable form written into failed-run manifests."""
        return {
            "error_code": self.error_code,
            "message": self.message,
            "details": self.details,
        }

    """
    GOAL: Send exception to Sentry for monitoring and tracking.

    PARAMETERS:
      level: Optional[str] - Log level for Sentry - 'error', 'warning', 'info'
      extra: Optional[Dict[str, Any]] - Additional context data - May be None
      tags: Optional[Dict[str, str]] - Tags for grouping - May be None

    RETURNS:
      Optional[str] - Sentry event ID or None if disabled - May be None

    RAISES:
      None - Never raises exceptions (graceful degradation)

    GUARANTEES:
      - Returns None if Sentry is disabled
      - Adds breadcrumb with exception context
      - Logs locally if Sentry is unavailable
    """
    def capture_to_sentry(
        self,
        level: Optional[str] = None,
        extra: Optional[Dict[str, Any]] = None,
        tags: Optional[Dict[str, str]] = None,
    ) -> Optional[str]:
        """
        Send exception to Sentry with error_code and message in tags/extra.
        """
        add_breadcrumb(
            message=f"Exception raised: {self.error_code}",
            category="exception",
            level=level or "error",
            data={
                "error_code": self.error_code,
                "message": self.message,
            },
        )

        exception_tags = dict(tags or {})
        exception_tags["error_code"] = self.error_code
        exception_tags["exception_type"] = self.__class__.__name__

        exception_extra = dict(extra or {})
        exception_extra["error_code"] = self.error_code
        exception_extra["message"] = self.message
        if self.details:
            exception_extra["details"] = self.details

        return capture_exception(
            self,
            level=level or "error",
            extra=exception_extra,
            tags=exception_tags,
        )


class ValidationError(DiffLabError):
    """
    Invalid arguments, configuration or input types.
    """

    def __init__(self, message: str = "Validation failed", details: dict[str, Any] | None = None):
        super().__init__(message, details)

    @property
    def error_code(self) -> str:
        return "VALIDATION_ERROR"

    @property
    def exit_code(self) -> int:
        return EXIT_VALIDATION


class DomainError(DiffLabError):
    """
    A state lies outside the model's state domain (e.g. x <= 0 for CIR).
    """

    def __init__(self, message: str = "State outside model domain", details: dict[str, Any] | None = None):
        super().__init__(message, details)

    @property
    def error_code(self) -> str:
        return "DOMAIN_ERROR"

    @property
    def exit_code(self) -> int:
        return EXIT_VALIDATION


class UnsupportedModelError(DiffLabError):
    """
    The requested operation has no implementation for the model family.

    Callers usually fall back to simulation or nonparametric estimation.
    """

    def __init__(self, message: str = "Operation not supported for this model", details: dict[str, Any] | None = None):
        super().__init__(message, details)

    @property
    def error_code(self) -> str:
        return "UNSUPPORTED_MODEL"

    @property
    def exit_code(self) -> int:
        return EXIT_VALIDATION


class ArbitrageViolationError(DiffLabError):
    """
    Option price outside the no-arbitrage bounds; details["bound"] names the bound.
    """

    def __init__(self, message: str = "Price violates no-arbitrage bounds", details: dict[str, Any] | None = None):
        super().__init__(message, details)

    @property
    def error_code(self) -> str:
        return "ARBITRAGE_VIOLATION"

    @property
    def exit_code(self) -> int:
        return EXIT_VALIDATION


class ExtrapolationError(DiffLabError):
    """
    Indirect-inference target outside the binding-map range; details carry the range.
    """

    def __init__(self, message: str = "Extrapolation refused", details: dict[str, Any] | None = None):
        super().__init__(message, details)

    @property
    def error_code(self) -> str:
        return "EXTRAPOLATION_REFUSED"

    @property
    def exit_code(self) -> int:
        return EXIT_VALIDATION


class IngestError(DiffLabError):
    """
    Input file rejected during ingestion.

    Unlike the other errors the code is chosen per instance, so each kind of
    bad input (spacing, values, schema, ...) is distinguishable by callers.
    """

    CODES = frozenset(
        {
            "NON_UNIFORM_SPACING",
            "NON_NUMERIC_VALUE",
            "TOO_FEW_ROWS",
            "SCHEMA_MISMATCH",
            "GAP_DETECTED",
            "MALFORMED_ROW",
            "EMPTY_FILE",
        }
    )

    def __init__(self, code: str, message: str, details: dict[str, Any] | None = None):
        if code not in self.CODES:
            raise ValueError(f"Unknown ingest error code: {code}")
        super().__init__(message, details)
        self._code = code

    @property
    def error_code(self) -> str:
        return self._code

    @property
    def exit_code(self) -> int:
        return EXIT_VALIDATION


class NumericalError(DiffLabError):
    """
    Quadrature, optimizer or selection failure; diagnostics live in details.
    """

    def __init__(self, message: str = "Numerical failure", details: dict[str, Any] | None = None):
        super().__init__(message, details)

    @property
    def error_code(self) -> str:
        return "NUMERICAL_FAILURE"

    @property
    def exit_code(self) -> int:
        return EXIT_NUMERICAL


class ArtifactIOError(DiffLabError):
    """
    Reading inputs or writing run artifacts failed.
    """

    def __init__(self, message: str = "I/O failure", details: dict[str, Any] | None = None):
        super().__init__(message, details)

    @property
    def error_code(self) -> str:
        return "IO_ERROR"

    @property
    def exit_code(self) -> int:
        return EXIT_IO
