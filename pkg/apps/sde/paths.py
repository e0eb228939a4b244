"""
Observed trajectories on a uniform time grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Mapping

import numpy as np
import numpy.typing as npt

from apps.core.exceptions import ValidationError

FloatArray = npt.NDArray[np.float64]


"""
GOAL: Uniformly spaced observations X_0, X_delta, ..., X_{n delta} of one trajectory.

PARAMETERS:
  delta: float - Time step in years - > 0
  values: array-like - Observations - length >= 2, all finite
  origin_time: float - Time of values[0] - Default 0
  excluded_transitions: tuple[int, ...] - Transitions i -> i+1 dropped from estimation (calendar gaps)
  diagnostics: Mapping[str, Any] - Producer notes (reflections, scheme, seed)

RAISES:
  ValidationError: delta <= 0, fewer than 2 values, non-finite values, out-of-range exclusions

GUARANTEES:
  - values is a read-only float64 array
  - n (number of transitions) = len(values) - 1
"""
@dataclass(frozen=True, eq=False)
class SamplePath:
    delta: float
    values: FloatArray
    origin_time: float = 0.0
    excluded_transitions: tuple[int, ...] = ()
    diagnostics: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64).reshape(-1)
        if not (math.isfinite(self.delta) and self.delta > 0):
            raise ValidationError("delta must be a positive finite number", details={"delta": self.delta})
        if values.size < 2:
            raise ValidationError("a sample path needs at least 2 observations", details={"length": int(values.size)})
        if not np.all(np.isfinite(values)):
            bad = int(np.flatnonzero(~np.isfinite(values))[0])
            raise ValidationError("sample path values must be finite", details={"first_bad_index": bad})
        excluded = tuple(sorted({int(i) for i in self.excluded_transitions}))
        if excluded and (excluded[0] < 0 or excluded[-1] >= values.size - 1):
            raise ValidationError("excluded transition index out of range", details={"excluded": list(excluded)})
        values.setflags(write=False)
        object.__setattr__(self, "delta", float(self.delta))
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "excluded_transitions", excluded)
        object.__setattr__(self, "diagnostics", MappingProxyType(dict(self.diagnostics)))

    @property
    def n(self) -> int:
        return int(self.values.size - 1)

    @property
    def times(self) -> FloatArray:
        return self.origin_time + self.delta * np.arange(self.values.size, dtype=np.float64)

    @property
    def is_positive(self) -> bool:
        return bool(np.all(self.values > 0))

    def transition_mask(self, lag: int = 1) -> npt.NDArray[np.bool_]:
        """Mask over i in [0, n+1-lag): True when no transition in i..i+lag-1 is excluded."""
        if lag < 1 or lag > self.n:
            raise ValidationError(f"lag must be in [1, {self.n}]", details={"lag": lag})
        broken = np.zeros(self.n, dtype=bool)
        if self.excluded_transitions:
            broken[list(self.excluded_transitions)] = True
        if lag == 1:
            return ~broken
        counts = np.concatenate([[0], np.cumsum(broken)])
        return (counts[lag:] - counts[:-lag]) == 0

    def with_values(self, values: npt.ArrayLike) -> "SamplePath":
        """Same grid and exclusions, new observations (bootstrap replicates, rescaling)."""
        return SamplePath(self.delta, np.asarray(values, dtype=np.float64), self.origin_time, self.excluded_transitions)


def increments(path: SamplePath, lag: int = 1) -> tuple[FloatArray, FloatArray]:
    """Valid (X_i, X_{i+lag}) pairs, skipping any that cross an excluded transition."""
    mask = path.transition_mask(lag)
    return path.values[:-lag][mask], path.values[lag:][mask]
