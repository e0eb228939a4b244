"""
State-domain estimation of drift and squared volatility.

Responses are built from forward differences of the path and smoothed against
the current state. Negative squared-volatility values are clipped to zero and
flagged on the returned curve.
"""

from __future__ import annotations

import logging
from typing import Callable, Optional

import numpy as np
import numpy.typing as npt
import statsmodels.api as sm
from scipy import integrate

from apps.core.exceptions import ValidationError
from apps.sde.paths import SamplePath
from apps.smoothing.curves import CurveEstimate, PointStatus, status_from_mass
from apps.smoothing.kernels import KernelSpec
from apps.smoothing.services import default_grid, kernel_density, local_linear, local_linear_slope, nadaraya_watson
from apps.state_estimation.schemes import difference_scheme

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]
CurveFn = Callable[[FloatArray], FloatArray]

MIN_PATH_LENGTH = 20
MIN_FIXED_DELTA_LENGTH = 100
RESIDUAL_GRID_POINTS = 501
INTEGRATION_POINTS = 2001
DENSITY_BATCHES = 10


def _require_length(path: SamplePath, minimum: int) -> None:
    if path.values.size < minimum:
        raise ValidationError(
            f"path needs at least {minimum} observations", details={"length": int(path.values.size), "minimum": minimum}
        )


def _clip_vol2(curve: CurveEstimate, estimator: str) -> CurveEstimate:
    clipped = curve.clipped_at_zero()
    if clipped is not curve:
        logger.warning("%s: %d negative squared-volatility points clipped to 0", estimator, clipped.diagnostics["clipped_points"])
    return clipped


def _smooth_responses(
    x: FloatArray, y: FloatArray, z: FloatArray, drift_kernel: KernelSpec, vol_kernel: KernelSpec, grid: FloatArray
) -> tuple[CurveEstimate, CurveEstimate]:
    drift = local_linear(x, y, drift_kernel, grid)
    vol2 = local_linear(x, z, vol_kernel, grid)
    return drift, vol2


"""
GOAL: Kernel-ratio estimates of drift and squared volatility from first differences.

PARAMETERS:
  path: SamplePath - Observations - length >= 20
  kernel: KernelSpec - Kernel and bandwidth in state units
  grid: Optional[array] - State grid (default: 1st-99th percentile grid)

RETURNS:
  tuple[CurveEstimate, CurveEstimate] - (drift, vol2); Nadaraya-Watson of Y and Z on X

RAISES:
  ValidationError: path too short
"""
def estimate_stanton(
    path: SamplePath, kernel: KernelSpec, grid: Optional[npt.ArrayLike] = None
) -> tuple[CurveEstimate, CurveEstimate]:
    _require_length(path, MIN_PATH_LENGTH)
    x, y, z = difference_scheme(1).responses(path)
    g = _state_grid(x, grid)
    drift = nadaraya_watson(x, y, kernel, g)
    vol2 = _clip_vol2(nadaraya_watson(x, z, kernel, g), "estimate_stanton")
    return drift, vol2


def _state_grid(x: FloatArray, grid: Optional[npt.ArrayLike]) -> FloatArray:
    if grid is not None:
        return np.asarray(grid, dtype=np.float64).reshape(-1)
    if np.ptp(x) == 0:
        return np.array([float(x[0])])
    return default_grid(x)


def _drift_at_observations(x: FloatArray, y: FloatArray, kernel: KernelSpec) -> FloatArray:
    """Local-linear drift on a dense grid over the sample range, interpolated to the observed states."""
    lo, hi = float(x.min()), float(x.max())
    if hi == lo:
        return np.full(x.size, float(np.mean(y)))
    dense = local_linear(x, y, kernel, np.linspace(lo, hi, RESIDUAL_GRID_POINTS))
    finite = np.isfinite(dense.value)
    return np.interp(x, dense.grid[finite], dense.value[finite])


"""
GOAL: Local-linear drift and squared volatility from first differences.

PARAMETERS:
  path: SamplePath - Observations - length >= 20
  kernel: KernelSpec - Kernel; its bandwidth is the default for both curves
  h_drift: Optional[float] - Drift bandwidth
  h_vol: Optional[float] - Volatility bandwidth
  grid: Optional[array] - State grid
  residual: bool - Smooth squared drift residuals (default) or raw squared differences Z

RETURNS:
  tuple[CurveEstimate, CurveEstimate] - (drift, vol2)

RAISES:
  ValidationError: path too short

GUARANTEES:
  - residual=False gives the same numbers as estimate_order_k(k=1) with the same kernel
  - vol2 >= 0; clipped points are flagged
"""
def estimate_fan_yao(
    path: SamplePath,
    kernel: KernelSpec,
    h_drift: Optional[float] = None,
    h_vol: Optional[float] = None,
    grid: Optional[npt.ArrayLike] = None,
    residual: bool = True,
) -> tuple[CurveEstimate, CurveEstimate]:
    _require_length(path, MIN_PATH_LENGTH)
    x, y, z = difference_scheme(1).responses(path)
    g = _state_grid(x, grid)
    drift_kernel = kernel if h_drift is None else kernel.with_bandwidth(h_drift)
    vol_kernel = kernel if h_vol is None else kernel.with_bandwidth(h_vol)
    if residual:
        mu = _drift_at_observations(x, y, drift_kernel)
        z = path.delta * (y - mu) ** 2
    drift, vol2 = _smooth_responses(x, y, z, drift_kernel, vol_kernel, g)
    return drift, _clip_vol2(vol2.with_values(vol2.value, residual=residual), "estimate_fan_yao")


"""
GOAL: Local-linear drift and squared volatility from order-k difference responses.

PARAMETERS:
  path: SamplePath - Observations - length >= k + 20
  k: int - Scheme order - 1..5 unless allow_high_order
  kernel: KernelSpec - Kernel and bandwidth
  grid: Optional[array] - State grid
  allow_high_order: bool - Permit k > 5

RETURNS:
  tuple[CurveEstimate, CurveEstimate] - (drift, vol2); diagnostics carry V1(k), V2(k)

RAISES:
  ValidationError: order out of range or path too short
"""
def estimate_order_k(
    path: SamplePath,
    k: int,
    kernel: KernelSpec,
    grid: Optional[npt.ArrayLike] = None,
    allow_high_order: bool = False,
) -> tuple[CurveEstimate, CurveEstimate]:
    scheme = difference_scheme(k, allow_high_order=allow_high_order)
    _require_length(path, k + MIN_PATH_LENGTH)
    x, y, z = scheme.responses(path)
    g = _state_grid(x, grid)
    drift, vol2 = _smooth_responses(x, y, z, kernel, kernel, g)
    factors = {"order": k, "v1": float(scheme.v1), "v2": float(scheme.v2)}
    drift = drift.with_values(drift.value, **factors)
    vol2 = _clip_vol2(vol2.with_values(vol2.value, residual=False, **factors), "estimate_order_k")
    return drift, vol2


def _lower_limit(path: SamplePath) -> float:
    return 0.0 if path.is_positive else float(path.values.min())


"""
GOAL: Squared volatility at a fixed sampling interval from the stationarity identity
      sigma^2(x) = 2 int_lower^x mu(u) f(u) du / f(x).

PARAMETERS:
  path: SamplePath - Observations - length >= 100
  kernel: KernelSpec - Kernel for the invariant density
  grid: Optional[array] - State grid

RETURNS:
  CurveEstimate - vol2; diagnostics carry the least-squares drift (intercept, slope, kappa, alpha)

RAISES:
  ValidationError: path too short or grid below the integration lower limit

GUARANTEES:
  - Lower limit is 0 for positive paths and the sample minimum otherwise
  - Points where f is zero are empty; non-positive integrals give 0 flagged clipped
  - stderr propagates the density's relative standard error
"""
def estimate_vol_fixed_delta(
    path: SamplePath, kernel: KernelSpec, grid: Optional[npt.ArrayLike] = None
) -> CurveEstimate:
    _require_length(path, MIN_FIXED_DELTA_LENGTH)
    x, y, _ = difference_scheme(1).responses(path)
    g = _state_grid(path.values, grid)
    lower = _lower_limit(path)
    if np.any(g < lower):
        raise ValidationError("grid extends below the integration lower limit", details={"lower": lower})

    fit = sm.OLS(y, sm.add_constant(x)).fit()
    intercept, slope = (float(v) for v in fit.params)
    kappa = -slope
    alpha = intercept / kappa if kappa != 0 else float("nan")

    nodes = np.union1d(np.linspace(lower, float(g.max()), INTEGRATION_POINTS), g)
    density_nodes = kernel_density(path.values, kernel, nodes)
    integral = integrate.cumulative_trapezoid((intercept + slope * nodes) * density_nodes.value, nodes, initial=0.0)
    positions = np.searchsorted(nodes, g)
    at_grid = kernel_density(path.values, kernel, g)
    f = at_grid.value
    numerator = 2.0 * integral[positions]

    with np.errstate(invalid="ignore", divide="ignore"):
        value = np.where(f > 0, numerator / f, np.nan)
        relative = np.where(f > 0, at_grid.stderr / f, np.nan)
    status = status_from_mass(at_grid.mass)
    status[f <= 0] = PointStatus.EMPTY.value
    nonpositive = (f > 0) & (numerator <= 0)
    value[nonpositive] = 0.0
    status[nonpositive] = PointStatus.CLIPPED.value
    if nonpositive.any():
        logger.warning("estimate_vol_fixed_delta: %d points with non-positive integral set to 0", int(nonpositive.sum()))

    return CurveEstimate(
        g,
        value,
        np.abs(value) * relative,
        at_grid.mass,
        status,
        diagnostics={
            "estimator": "vol_fixed_delta",
            "bandwidth": kernel.bandwidth,
            "intercept": intercept,
            "slope": slope,
            "kappa": kappa,
            "alpha": alpha,
            "lower_limit": lower,
            "clipped_points": int(nonpositive.sum()),
        },
    )


def _log_density_slope(values: FloatArray, kernel: KernelSpec, grid: FloatArray) -> FloatArray:
    """d/dx log f at the grid from a local-linear fit to log f on a dense grid."""
    span = kernel.bandwidth
    dense = np.linspace(float(grid.min()) - span, float(grid.max()) + span, INTEGRATION_POINTS // 4)
    density = kernel_density(values, kernel, dense).value
    positive = density > 0
    if positive.sum() < 3:
        return np.full(grid.size, np.nan)
    slope = local_linear_slope(dense[positive], np.log(density[positive]), kernel, grid)
    return slope.value


def _vol2_terms(vol2_fn: CurveFn, grid: FloatArray, step: float) -> tuple[FloatArray, FloatArray]:
    vol2 = np.asarray(vol2_fn(grid), dtype=np.float64)
    dvol2 = (np.asarray(vol2_fn(grid + step)) - np.asarray(vol2_fn(grid - step))) / (2.0 * step)
    return vol2, dvol2


"""
GOAL: Drift from the invariant density of a fine-interval path,
      mu(x) = [sigma^2(x) f(x)]' / (2 f(x)) = (sigma^2)'/2 + sigma^2 (log f)'/2.

PARAMETERS:
  vol2_fn: Callable - sigma^2 evaluable on arrays
  path_fine: SamplePath - Fine-interval observations
  kernel: KernelSpec - Kernel for the density and the log-density slope
  grid: Optional[array] - State grid
  n_batches: int - Contiguous batches for the batch-means standard error - >= 2

RETURNS:
  CurveEstimate - drift; stderr from batch means over contiguous sub-paths

GUARANTEES:
  - Linear in vol2_fn: scaling sigma^2 by c scales the drift by c
"""
def drift_from_density(
    vol2_fn: CurveFn,
    path_fine: SamplePath,
    kernel: KernelSpec,
    grid: Optional[npt.ArrayLike] = None,
    n_batches: int = DENSITY_BATCHES,
) -> CurveEstimate:
    _require_length(path_fine, MIN_FIXED_DELTA_LENGTH)
    if n_batches < 2:
        raise ValidationError("n_batches must be >= 2", details={"n_batches": n_batches})
    values = path_fine.values
    g = _state_grid(values, grid)
    step = 1e-4 * max(float(np.ptp(g)), kernel.bandwidth)
    vol2, dvol2 = _vol2_terms(vol2_fn, g, step)

    def assemble(sample: FloatArray) -> FloatArray:
        return 0.5 * dvol2 + 0.5 * vol2 * _log_density_slope(sample, kernel, g)

    drift = assemble(values)
    batches = np.array([assemble(b) for b in np.array_split(values, n_batches) if b.size >= 2])
    counts = np.sum(np.isfinite(batches), axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        spread = np.nanstd(batches, axis=0, ddof=1)
        stderr = np.where(counts >= 2, spread / np.sqrt(counts), np.nan)

    density = kernel_density(values, kernel, g)
    status = density.status.copy()
    status[~np.isfinite(drift)] = PointStatus.EMPTY.value
    return CurveEstimate(
        g,
        drift,
        stderr,
        density.mass,
        status,
        diagnostics={"estimator": "drift_from_density", "bandwidth": kernel.bandwidth, "batches": n_batches},
    )


"""
GOAL: Evaluate mu = [sigma^2 f]' / (2 f) with exact sigma^2 and f.

PARAMETERS:
  vol2_fn: Callable - sigma^2 on arrays
  density_fn: Callable - Invariant density on arrays
  grid: array - Evaluation points
  step: Optional[float] - Difference step (default 1e-3 of the grid span)

RETURNS:
  FloatArray - drift values; NaN where f(x) = 0

GUARANTEES:
  - Five-point central differences, error O(step^4)
"""
def drift_from_invariant_density(
    vol2_fn: CurveFn, density_fn: CurveFn, grid: npt.ArrayLike, step: Optional[float] = None
) -> FloatArray:
    g = np.asarray(grid, dtype=np.float64).reshape(-1)
    if step is None:
        step = 1e-3 * (float(np.ptp(g)) or 1.0)

    def product(u: FloatArray) -> FloatArray:
        return np.asarray(vol2_fn(u), dtype=np.float64) * np.asarray(density_fn(u), dtype=np.float64)

    derivative = (
        -product(g + 2 * step) + 8 * product(g + step) - 8 * product(g - step) + product(g - 2 * step)
    ) / (12.0 * step)
    f = np.asarray(density_fn(g), dtype=np.float64)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(f > 0, derivative / (2.0 * f), np.nan)
