"""
Function estimates on a grid.

A CurveEstimate carries the estimate, pointwise standard errors, the
effective local sample size and a status per grid point. Point-wise trouble
is recorded in `status`, never raised.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from types import MappingProxyType
from typing import Any, Mapping

import numpy as np
import numpy.typing as npt
import pandas as pd

from apps.core.conf import mass_floor
from apps.core.exceptions import ValidationError

FloatArray = npt.NDArray[np.float64]


class PointStatus(str, enum.Enum):
    OK = "ok"
    LOW_MASS = "low_mass"
    DEGENERATE = "degenerate"
    CLIPPED = "clipped"
    NOT_CONVERGED = "not_converged"
    EMPTY = "empty"


RELIABLE = frozenset({PointStatus.OK.value, PointStatus.CLIPPED.value})


def _frozen(values: npt.ArrayLike, dtype: Any = np.float64) -> np.ndarray:
    array = np.array(values, dtype=dtype).reshape(-1)
    array.setflags(write=False)
    return array


def status_from_mass(mass: FloatArray, floor: float | None = None) -> np.ndarray:
    """ok / low_mass / empty per point from the effective sample size."""
    floor = mass_floor() if floor is None else floor
    status = np.full(mass.shape, PointStatus.OK.value, dtype=object)
    status[mass < floor] = PointStatus.LOW_MASS.value
    status[mass <= 0] = PointStatus.EMPTY.value
    return status


"""
GOAL: Immutable function estimate on an ascending grid.

PARAMETERS:
  grid: array - Ascending evaluation points
  value: array - Estimate per point (NaN where status is empty)
  stderr: array - Pointwise standard error, >= 0 or NaN
  mass: array - Effective local sample size, >= 0
  status: array[str] - PointStatus value per point; default derived from mass
  diagnostics: Mapping - Estimator notes (bandwidth, clipped count, ...)

RAISES:
  ValidationError: unequal lengths, non-ascending grid, negative stderr or mass

GUARANTEES:
  - Arrays are read-only
  - reliable is True exactly where status is ok or clipped
"""
@dataclass(frozen=True, eq=False)
class CurveEstimate:
    grid: FloatArray
    value: FloatArray
    stderr: FloatArray
    mass: FloatArray
    status: np.ndarray | None = None
    diagnostics: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        grid = _frozen(self.grid)
        value = _frozen(self.value)
        stderr = _frozen(self.stderr)
        mass = _frozen(self.mass)
        status = status_from_mass(mass) if self.status is None else np.array(self.status, dtype=object).reshape(-1)
        status.setflags(write=False)
        if not (grid.size == value.size == stderr.size == mass.size == status.size):
            raise ValidationError(
                "curve arrays must have equal lengths",
                details={"sizes": [grid.size, value.size, stderr.size, mass.size, status.size]},
            )
        if grid.size > 1 and np.any(np.diff(grid) <= 0):
            raise ValidationError("curve grid must be strictly ascending")
        if np.any(stderr[np.isfinite(stderr)] < 0) or np.any(mass < 0):
            raise ValidationError("stderr and mass must be >= 0")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "value", value)
        object.__setattr__(self, "stderr", stderr)
        object.__setattr__(self, "mass", mass)
        object.__setattr__(self, "status", status)
        object.__setattr__(self, "diagnostics", MappingProxyType(dict(self.diagnostics)))

    def __len__(self) -> int:
        return int(self.grid.size)

    @property
    def reliable(self) -> npt.NDArray[np.bool_]:
        return np.isin(self.status.astype(str), list(RELIABLE))

    def band(self, width: float = 2.0) -> tuple[FloatArray, FloatArray]:
        """value -+ width * stderr."""
        return self.value - width * self.stderr, self.value + width * self.stderr

    def interpolate(self, x: npt.ArrayLike) -> FloatArray:
        """Linear interpolation through reliable points; NaN outside their range."""
        keep = self.reliable & np.isfinite(self.value)
        x = np.asarray(x, dtype=np.float64)
        if not keep.any():
            return np.full(x.shape, np.nan)
        g, v = self.grid[keep], self.value[keep]
        return np.interp(x, g, v, left=np.nan, right=np.nan)

    def clipped_at_zero(self) -> "CurveEstimate":
        """Negative values set to 0 and flagged clipped; count in diagnostics."""
        negative = np.isfinite(self.value) & (self.value < 0)
        if not negative.any():
            return self
        value = np.where(negative, 0.0, self.value)
        status = self.status.copy()
        status[negative] = PointStatus.CLIPPED.value
        diagnostics = dict(self.diagnostics, clipped_points=int(negative.sum()))
        return replace(self, value=value, status=status, diagnostics=diagnostics)

    def with_values(self, value: npt.ArrayLike, stderr: npt.ArrayLike | None = None, **diagnostics: Any) -> "CurveEstimate":
        return replace(
            self,
            value=np.asarray(value, dtype=np.float64),
            stderr=self.stderr if stderr is None else np.asarray(stderr, dtype=np.float64),
            status=self.status.copy(),
            diagnostics=dict(self.diagnostics, **diagnostics),
        )

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"grid": self.grid, "value": self.value, "stderr": self.stderr, "mass": self.mass, "status": self.status}
        )
