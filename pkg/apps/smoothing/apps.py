from __future__ import annotations

from django.apps import AppConfig


class SmoothingConfig(AppConfig):
    name = "apps.smoothing"
    verbose_name = "Kernel smoothing"
