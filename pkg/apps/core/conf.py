"""
Settings access for library code.

Numerical modules read their knobs through `setting()` so they work both
inside the Django project and as a plain library without configured settings.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import TypeVar

from django.core.exceptions import ImproperlyConfigured

T = TypeVar("T")


"""
GOAL: Read a Django setting with a fallback that also covers unconfigured settings.

PARAMETERS:
  name: str - Setting name, e.g. "DIFFLAB_MASS_FLOOR" - Non-empty
  default: T - Value used when the setting is absent or Django is not configured

RETURNS:
  T - Setting value or default

RAISES:
  None

GUARANTEES:
  - Never raises ImproperlyConfigured
"""
def setting(name: str, default: T) -> T:
    from django.conf import settings

    try:
        return getattr(settings, name, default)  # type: ignore[no-any-return]
    except ImproperlyConfigured:
        return default


def mass_floor() -> float:
    return float(setting("DIFFLAB_MASS_FLOOR", 5.0))


def grid_points() -> int:
    return int(setting("DIFFLAB_GRID_POINTS", 100))


def default_n_boot() -> int:
    return int(setting("DIFFLAB_N_BOOT", 500))


def thread_cap() -> int:
    """Parallelism cap: DIFFLAB_THREADS, else CPU count; at least 1."""
    value = setting("DIFFLAB_THREADS", None)
    if value is None:
        value = os.cpu_count() or 1
    return max(1, int(value))


def output_dir() -> Path:
    return Path(setting("DIFFLAB_OUTPUT_DIR", "./runs"))


def default_calendar() -> str:
    return str(setting("DIFFLAB_CALENDAR", "years"))
