from __future__ import annotations

from django.apps import AppConfig


class DerivativesConfig(AppConfig):
    name = "apps.derivatives"
    verbose_name = "Option pricing and state-price densities"
