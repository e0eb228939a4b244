"""
Data Transfer Objects (DTOs) for difflab results.

Pydantic v2 models for everything that leaves the process as JSON: parametric
fits, specification-test results and run manifests. Array-valued numerical
results (curves, surfaces, paths) are frozen dataclasses in their apps.
"""

from __future__ import annotations

import math
from datetime import datetime
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


# ============================================================================
# Estimation DTOs
# ============================================================================

class FitResult(BaseModel):
    """
    GOAL: Carry a parametric fit (estimates, standard errors, objective, diagnostics).

    GUARANTEES:
      - parameter_names, estimates and stderr have equal length
      - stderr entries are >= 0 or NaN (NaN means "not available", see diagnostics)
      - converged=False always comes with a non-empty diagnostics dict
    """
    model_config = ConfigDict(frozen=True)

    family: str
    method: Literal["pseudo_mle", "exact_mle", "gmm", "indirect", "minimum_distance"]
    parameter_names: List[str]
    estimates: List[float]
    stderr: List[float]
    loglik: Optional[float] = None
    objective: Optional[float] = None
    n_obs: int = Field(ge=0)
    converged: bool = True
    diagnostics: Dict[str, Any] = Field(default_factory=dict)

    @field_validator("stderr")
    @classmethod
    def _stderr_nonnegative(cls, value: List[float]) -> List[float]:
        for item in value:
            if not math.isnan(item) and item < 0:
                raise ValueError("stderr must be >= 0")
        return value

    @model_validator(mode="after")
    def _consistent(self) -> "FitResult":
        if not (len(self.parameter_names) == len(self.estimates) == len(self.stderr)):
            raise ValueError("parameter_names, estimates and stderr must have equal length")
        if not self.converged and not self.diagnostics:
            raise ValueError("non-converged fits must carry diagnostics")
        return self

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.parameter_names, self.estimates))

    def stderr_dict(self) -> dict[str, float]:
        return dict(zip(self.parameter_names, self.stderr))


class TestResult(BaseModel):
    """
    GOAL: Carry a specification/constancy test outcome.

    GUARANTEES:
      - p_value lies in [0, 1] when present
      - flagged is True when more than 10% of bootstrap replicates failed
    """
    __test__ = False  # not a pytest class

    model_config = ConfigDict(frozen=True)

    test: str
    statistic: float
    p_value: Optional[float] = Field(default=None, ge=0.0, le=1.0)
    n_boot: int = Field(default=0, ge=0)
    n_failed: int = Field(default=0, ge=0)
    flagged: bool = False
    diagnostics: Dict[str, Any] = Field(default_factory=dict)


# ============================================================================
# Run DTOs
# ============================================================================

class RunManifest(BaseModel):
    """
    GOAL: Describe one CLI run so it can be reproduced from this file alone.

    GUARANTEES:
      - seed is always materialized
      - status "failed" comes with an error payload
    """
    command: str
    seed: int
    status: Literal["running", "succeeded", "failed"] = "running"
    config: Dict[str, Any]
    versions: Dict[str, str] = Field(default_factory=dict)
    artifacts: List[str] = Field(default_factory=list)
    started_at: datetime
    finished_at: Optional[datetime] = None
    error: Optional[Dict[str, Any]] = None
