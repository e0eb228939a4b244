"""
difflab settings package.

DIFFLAB_ENV picks the layer on top of base.py: "development" (default, verbose
logging, DEBUG) or "production" (quiet logging, Sentry when SENTRY_DSN is set).
The project .env is read first, so DIFFLAB_ENV may live there as well.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Mapping

from django.core.exceptions import ImproperlyConfigured
from dotenv import load_dotenv

SETTINGS_LAYERS = ("development", "production")

load_dotenv(Path(__file__).resolve().parents[2] / ".env")


def settings_environment(environ: Mapping[str, str] = os.environ) -> str:
    """Normalized DIFFLAB_ENV; unknown names are a configuration error, not a silent fallback."""
    name = environ.get("DIFFLAB_ENV", "development").strip().lower() or "development"
    if name not in SETTINGS_LAYERS:
        raise ImproperlyConfigured(f"DIFFLAB_ENV={name!r}; expected one of {', '.join(SETTINGS_LAYERS)}")
    return name


DIFFLAB_ENV = settings_environment()

if DIFFLAB_ENV == "production":
    from .production import *  # noqa: F401, F403
else:
    from .development import *  # noqa: F401, F403
