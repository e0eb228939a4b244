"""
Combining state-domain and time-domain volatility estimates.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from apps.core.exceptions import ValidationError
from apps.sde.paths import SamplePath

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PointEstimate:
    value: float
    stderr: float
    n_obs: int = 0


@dataclass(frozen=True)
class IntegratedEstimate:
    value: float
    stderr: float
    state_weight: float
    time_weight: float


"""
GOAL: Inverse-variance combination of a state-domain and a time-domain estimate.

PARAMETERS:
  state_value, state_stderr: float - State-domain estimate - stderr >= 0
  time_value, time_stderr: float - Time-domain estimate - stderr >= 0

RETURNS:
  IntegratedEstimate - combined value, stderr sqrt((v1^-1 + v2^-1)^-1) and the two weights

RAISES:
  ValidationError: negative or non-finite inputs, or both stderr zero

GUARANTEES:
  - Weights are non-negative and sum to one
  - A zero stderr returns that estimate with weight one
"""
def integrate_time_state(
    state_value: float, state_stderr: float, time_value: float, time_stderr: float
) -> IntegratedEstimate:
    numbers = (state_value, state_stderr, time_value, time_stderr)
    if not all(math.isfinite(v) for v in numbers) or state_stderr < 0 or time_stderr < 0:
        raise ValidationError("estimates must be finite with stderr >= 0", details={"inputs": list(numbers)})
    if state_stderr == 0 and time_stderr == 0:
        raise ValidationError("at least one estimate needs a positive stderr")
    if state_stderr == 0:
        return IntegratedEstimate(state_value, 0.0, 1.0, 0.0)
    if time_stderr == 0:
        return IntegratedEstimate(time_value, 0.0, 0.0, 1.0)
    precision_state = 1.0 / state_stderr**2
    precision_time = 1.0 / time_stderr**2
    total = precision_state + precision_time
    w_state = precision_state / total
    return IntegratedEstimate(
        value=w_state * state_value + (1.0 - w_state) * time_value,
        stderr=math.sqrt(1.0 / total),
        state_weight=w_state,
        time_weight=1.0 - w_state,
    )


@dataclass(frozen=True)
class VolatilityForecast:
    state: PointEstimate
    time: PointEstimate
    combined: IntegratedEstimate


def _mean_and_stderr(values: np.ndarray) -> PointEstimate:
    return PointEstimate(float(values.mean()), float(values.std(ddof=1) / math.sqrt(values.size)), int(values.size))


"""
GOAL: Forecast sigma^2 at an observation index from data up to that index.

PARAMETERS:
  path: SamplePath - Observations
  index: int - Forecast origin; only transitions ending at or before it are used
  state_halfwidth: float - Band |X_j - X_index| < halfwidth for the state-domain estimate - > 0
  time_window: int - Number of most recent transitions for the time-domain estimate - >= 2

RETURNS:
  VolatilityForecast - state-domain, time-domain and combined estimates of sigma^2

RAISES:
  ValidationError: bad arguments, or fewer than two observations in either estimate

GUARANTEES:
  - The state-domain band excludes the transitions used by the time-domain estimate
  - Excluded (gap) transitions are never used
"""
def volatility_forecast(path: SamplePath, index: int, state_halfwidth: float, time_window: int) -> VolatilityForecast:
    if not (0 < index <= path.n):
        raise ValidationError("forecast index out of range", details={"index": index, "n": path.n})
    if not state_halfwidth > 0 or time_window < 2:
        raise ValidationError(
            "state_halfwidth must be > 0 and time_window >= 2",
            details={"state_halfwidth": state_halfwidth, "time_window": time_window},
        )
    x = path.values
    valid = path.transition_mask(1)[:index]
    squared = np.diff(x[: index + 1]) ** 2 / path.delta
    positions = np.flatnonzero(valid)
    if positions.size < time_window + 2:
        raise ValidationError("not enough history before the forecast index", details={"index": index})

    recent = positions[-time_window:]
    earlier = positions[:-time_window]
    in_band = earlier[np.abs(x[earlier] - x[index]) < state_halfwidth]
    if in_band.size < 2:
        raise ValidationError(
            "fewer than two past states fall in the state band",
            details={"index": index, "state_halfwidth": state_halfwidth},
        )
    state = _mean_and_stderr(squared[in_band])
    time = _mean_and_stderr(squared[recent])
    combined = integrate_time_state(state.value, state.stderr, time.value, time.stderr)
    logger.debug(
        "volatility_forecast at %d: state %.4g (n=%d), time %.4g, weight on state %.3f",
        index, state.value, state.n_obs, time.value, combined.state_weight,
    )
    return VolatilityForecast(state, time, combined)
