from __future__ import annotations

from django.apps import AppConfig


class TimeEstimationConfig(AppConfig):
    name = "apps.time_estimation"
    verbose_name = "Time-domain estimation"
