from __future__ import annotations

from django.apps import AppConfig


class StateEstimationConfig(AppConfig):
    name = "apps.state_estimation"
    verbose_name = "State-domain estimation"
