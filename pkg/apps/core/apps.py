"""
Core app configuration for Django.

This app provides the shared plumbing for every difflab app.
"""

from django.apps import AppConfig


class CoreConfig(AppConfig):
    """
    Configuration for the core application.

    Provides:
    - Exception classes with error/exit codes
    - Sentry monitoring wrapper
    - Settings access, random streams and parallel map
    - Pydantic DTOs and run-configuration schemas
    """

    name = "apps.core"
    verbose_name = "Core"
