"""
Monitoring with Sentry integration.

Tracks failed runs and numerical breakdowns, degrading gracefully to local
logging when Sentry is not configured.
"""

from __future__ import annotations

import logging
from contextlib import contextmanager
from typing import Any, Dict, Iterator, Mapping, Optional

import sentry_sdk
from sentry_sdk.integrations.logging import LoggingIntegration

logger = logging.getLogger(__name__)

# Global flag; stays False in tests and local runs without a DSN
_sentry_enabled: bool = False


"""
GOAL: Initialize Sentry SDK for error monitoring.

PARAMETERS:
  dsn: str - Sentry DSN - Empty string disables monitoring
  environment: str - development or production - Not empty
  traces_sample_rate: float - Trace sampling rate - 0.0 <= value <= 1.0
  release: Optional[str] - Release identifier - May be None

RETURNS:
  bool - True when Sentry is initialized - Never raises

RAISES:
  None - Graceful degradation

GUARANTEES:
  - Empty DSN returns False without touching the SDK
  - _sentry_enabled reflects the actual state
"""
def init_sentry(
    dsn: str,
    environment: str = "development",
    traces_sample_rate: float = 0.0,
    release: Optional[str] = None,
) -> bool:
    """
    Initialize Sentry with the logging integration; disable on empty DSN or failure.
    """
    global _sentry_enabled

    if not dsn or dsn.strip() == "":
        logger.info("Sentry monitoring disabled: SENTRY_DSN is empty")
        _sentry_enabled = False
        return False

    try:
        sentry_sdk.init(
            dsn=dsn,
            environment=environment,
            traces_sample_rate=traces_sample_rate,
            release=release,
            integrations=[
                LoggingIntegration(
                    level=logging.INFO,
                    event_level=logging.ERROR,
                ),
            ],
            ignore_errors=[KeyboardInterrupt, SystemExit],
        )
        _sentry_enabled = True
        logger.info("Sentry monitoring initialized: environment=%s", environment)
        return True
    except Exception as e:
        logger.error("Failed to initialize Sentry: %s", e, exc_info=True)
        _sentry_enabled = False
        return False


def is_sentry_enabled() -> bool:
    return _sentry_enabled


"""
GOAL: Send an exception to Sentry with context.

PARAMETERS:
  exception: Exception - Exception to report - Not None
  level: Optional[str] - 'error', 'warning', 'info'
  extra: Optional[Dict[str, Any]] - Context data - May be None
  tags: Optional[Dict[str, str]] - Grouping tags - May be None

RETURNS:
  Optional[str] - Sentry event ID, None when disabled

RAISES:
  None - Graceful degradation

GUARANTEES:
  - When disabled the exception is logged locally and None is returned
"""
def capture_exception(
    exception: BaseException,
    level: Optional[str] = None,
    extra: Optional[Dict[str, Any]] = None,
    tags: Optional[Dict[str, str]] = None,
) -> Optional[str]:
    """
    Report an exception, or log it locally when Sentry is disabled.
    """
    if not _sentry_enabled:
        logger.error("Exception (Sentry disabled): %s: %s", type(exception).__name__, exception)
        return None

    try:
        with sentry_sdk.new_scope() as scope:
            if extra:
                scope.set_context("extra", extra)
            if tags:
                for key, value in tags.items():
                    scope.set_tag(key, value)
            if level:
                scope.set_level(level)
            event_id = sentry_sdk.capture_exception(exception)
        logger.info("Exception sent to Sentry: %s", event_id)
        return event_id
    except Exception as e:
        logger.error("Failed to send exception to Sentry: %s", e, exc_info=True)
        return None


def capture_message(message: str, level: str = "info", tags: Optional[Dict[str, str]] = None) -> Optional[str]:
    """
    Report a message (e.g. a flagged p-value) or log it locally when disabled.
    """
    if not _sentry_enabled:
        logger.log(getattr(logging, level.upper(), logging.INFO), "Message (Sentry disabled): %s", message)
        return None

    try:
        with sentry_sdk.new_scope() as scope:
            for key, value in (tags or {}).items():
                scope.set_tag(key, value)
            return sentry_sdk.capture_message(message, level=level)
    except Exception as e:
        logger.error("Failed to send message to Sentry: %s", e, exc_info=True)
        return None


"""
GOAL: Tag every Sentry event raised during one CLI run with its command, seed and config.

PARAMETERS:
  command: str - difflab command name
  seed: int - Materialized run seed
  config: Mapping[str, Any] - Resolved RunConfig in JSON form

GUARANTEES:
  - Tags never leak into events outside the block
  - A no-op when Sentry is disabled
"""
@contextmanager
def run_scope(command: str, seed: int, config: Mapping[str, Any]) -> Iterator[None]:
    if not _sentry_enabled:
        yield
        return
    with sentry_sdk.isolation_scope() as scope:
        scope.set_tag("command", command)
        scope.set_tag("seed", str(seed))
        scope.set_context("run_config", dict(config))
        yield


def add_breadcrumb(
    message: str,
    category: str = "default",
    level: str = "info",
    data: Optional[Dict[str, Any]] = None,
) -> None:
    """
    Record a breadcrumb; a no-op when Sentry is disabled.
    """
    if not _sentry_enabled:
        return

    try:
        sentry_sdk.add_breadcrumb(message=message, category=category, level=level, data=data or {})
    except Exception as e:
        logger.debug("Failed to add breadcrumb: %s", e)
