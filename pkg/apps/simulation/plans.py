"""
Simulation plans: what to simulate, from where, on which grid, with which seed.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Literal, Union

from apps.core.exceptions import UnsupportedModelError, ValidationError
from apps.sde.catalog import Family, ModelSpec

STATIONARY = "stationary"
StartState = Union[float, Literal["stationary"]]


class Scheme(str, enum.Enum):
    EULER = "euler"
    ORDER_ONE = "order_one"
    DERIVATIVE_FREE = "derivative_free"
    EXACT = "exact"


EXACT_FAMILIES = frozenset({Family.GBM, Family.VASICEK, Family.CIR})


"""
GOAL: Immutable description of one simulation request.

PARAMETERS:
  model: ModelSpec - Model to simulate
  x0: float | "stationary" - Initial state or a draw from the invariant law
  delta: float - Observation step in years - > 0
  n_steps: int - Number of observed transitions - >= 1
  substeps: int - Integration substeps per observation step (M) - >= 1
  seed: int - 64-bit stream seed
  scheme: Scheme - euler, order_one, derivative_free or exact

RAISES:
  ValidationError: step counts or delta out of range, x0 outside the domain
  UnsupportedModelError: exact scheme or stationary start unavailable for the family

GUARANTEES:
  - Equal plans give bit-identical paths
"""
@dataclass(frozen=True)
class SimPlan:
    model: ModelSpec
    x0: StartState
    delta: float
    n_steps: int
    substeps: int = 1
    seed: int = 0
    scheme: Scheme = Scheme.EULER

    def __post_init__(self) -> None:
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if not (math.isfinite(self.delta) and self.delta > 0):
            raise ValidationError("delta must be > 0", details={"delta": self.delta})
        if self.n_steps < 1:
            raise ValidationError("n_steps must be >= 1", details={"n_steps": self.n_steps})
        if self.substeps < 1:
            raise ValidationError("substeps must be >= 1", details={"substeps": self.substeps})
        if self.scheme is Scheme.EXACT and (
            self.model.family not in EXACT_FAMILIES or not self.model.has_closed_form_transition
        ):
            raise UnsupportedModelError(
                f"exact sampling is not available for {self.model.family.value}",
                details={"family": self.model.family.value},
            )
        if self.scheme is Scheme.DERIVATIVE_FREE and not self.model.is_time_homogeneous:
            raise UnsupportedModelError("the derivative-free scheme needs a time-homogeneous model")
        if self.x0 == STATIONARY:
            if not self.model.is_stationary:
                raise UnsupportedModelError(
                    f"{self.model.family.value} model has no stationary start",
                    details={"family": self.model.family.value},
                )
            if self.scheme is Scheme.EXACT and self.model.family is Family.CIR and not self.model.is_feller:
                raise UnsupportedModelError(
                    "stationary exact CIR start requires the Feller condition q >= 0",
                    details={"q": self.model.feller_index},
                )
        else:
            x0 = float(self.x0)
            if not math.isfinite(x0):
                raise ValidationError("x0 must be finite", details={"x0": self.x0})
            if self.model.positive_domain and x0 <= 0:
                raise ValidationError("x0 must be > 0 for positive-domain models", details={"x0": x0})
            object.__setattr__(self, "x0", x0)

    @property
    def step(self) -> float:
        """Integration step delta / M."""
        return self.delta / self.substeps

    @property
    def stationary_start(self) -> bool:
        return self.x0 == STATIONARY
