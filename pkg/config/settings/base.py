from __future__ import annotations

import os
from pathlib import Path
from typing import Any

BASE_DIR = Path(__file__).resolve().parent.parent.parent


"""
GOAL: Read an environment variable with optional default.

PARAMETERS:
  name: str - Environment variable name - Must be non-empty
  default: str | None - Fallback value - Optional

RETURNS:
  str | None - Environment value or default - Never raises on missing var

RAISES:
  None

GUARANTEES:
  - Does not strip or coerce the value
"""
def _env(name: str, default: str | None = None) -> str | None:
    return os.getenv(name, default)


SECRET_KEY = _env("SECRET_KEY", "difflab-local-key") or "difflab-local-key"

INSTALLED_APPS = [
    "apps.core.apps.CoreConfig",
    "apps.sde.apps.SdeConfig",
    "apps.simulation.apps.SimulationConfig",
    "apps.smoothing.apps.SmoothingConfig",
    "apps.state_estimation.apps.StateEstimationConfig",
    "apps.time_estimation.apps.TimeEstimationConfig",
    "apps.inference.apps.InferenceConfig",
    "apps.derivatives.apps.DerivativesConfig",
    "apps.experiments.apps.ExperimentsConfig",
]

# Numerical library only: no models, no database.
DATABASES: dict[str, Any] = {}

USE_I18N = False
USE_TZ = True
TIME_ZONE = "UTC"

# Parallelism cap for grid, bootstrap and Monte Carlo work
_threads = (_env("DIFFLAB_THREADS", "") or "").strip()
DIFFLAB_THREADS = int(_threads) if _threads else (os.cpu_count() or 1)

DIFFLAB_OUTPUT_DIR = Path(_env("DIFFLAB_OUTPUT_DIR", "./runs") or "./runs")
DIFFLAB_MASS_FLOOR = float(_env("DIFFLAB_MASS_FLOOR", "5") or "5")
DIFFLAB_GRID_POINTS = int(_env("DIFFLAB_GRID_POINTS", "100") or "100")
DIFFLAB_N_BOOT = int(_env("DIFFLAB_N_BOOT", "500") or "500")
DIFFLAB_CALENDAR = _env("DIFFLAB_CALENDAR", "years") or "years"

# Sentry monitoring settings
SENTRY_DSN = _env("SENTRY_DSN", "") or ""
SENTRY_ENVIRONMENT = _env("SENTRY_ENVIRONMENT", "development") or "development"
SENTRY_TRACES_SAMPLE_RATE = float(_env("SENTRY_TRACES_SAMPLE_RATE", "0.0") or "0.0")

if SENTRY_DSN:
    try:
        from apps.core.monitoring import init_sentry

        init_sentry(
            dsn=SENTRY_DSN,
            environment=SENTRY_ENVIRONMENT,
            traces_sample_rate=SENTRY_TRACES_SAMPLE_RATE,
        )
    except Exception as e:
        import logging
        logging.error(f"Failed to initialize Sentry: {e}", exc_info=True)

LOG_DIR = BASE_DIR / "logs"
LOGGING: dict[str, Any] = {
    "version": 1,
    "disable_existing_loggers": False,
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
        },
    },
    "root": {
        "handlers": ["console"],
        "level": "INFO",
    },
}
