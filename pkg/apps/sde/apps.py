from __future__ import annotations

from django.apps import AppConfig


class SdeConfig(AppConfig):
    name = "apps.sde"
    verbose_name = "Diffusion models"
