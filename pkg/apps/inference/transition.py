"""
Nonparametric transition densities and distributions (double-kernel estimator).

p(y | x) is estimated as sum_i K_n(X_i - x, x) W_h2(X_{i+lag} - y), with K_n the
local-linear equivalent kernel in x and a gaussian W in y.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Mapping, Optional

import numpy as np
import numpy.typing as npt
from scipy import integrate, stats

from apps.core.conf import grid_points
from apps.core.exceptions import ValidationError
from apps.core.parallel import chunked, parallel_map
from apps.sde.catalog import ModelSpec
from apps.sde.paths import SamplePath, increments
from apps.sde.services import transition_cdf, transition_density
from apps.smoothing.bandwidth import CVMode, select_bandwidth_cv, silverman_bandwidth
from apps.smoothing.curves import PointStatus
from apps.smoothing.kernels import KernelShape, KernelSpec
from apps.smoothing.services import BLOCK_ELEMENTS, local_linear_weights

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]

MIN_PATH_LENGTH = 100
TRUNCATION_QUANTILES = (0.05, 0.95)
NORMALIZATION_BAND = (0.9, 1.1)
Y_TAIL_BANDWIDTHS = 4.0
H2_CANDIDATE_FACTORS = (0.5, 0.7, 1.0, 1.4, 2.0)
X_KERNEL = KernelShape.EPANECHNIKOV


"""
GOAL: Transition density (or distribution) values on an x-by-y grid.

PARAMETERS:
  x_grid: array - Conditioning states, ascending
  y_grid: array - Next-state values, ascending
  density: array - shape (len(x_grid), len(y_grid)), >= 0
  delta: float - Time between the conditioning and the next state (lag * path delta)
  lag: int - Number of path steps in one transition
  bandwidths: tuple[float, float] - (h1, h2); NaN for parametric surfaces
  truncation: tuple[float, float] - State interval the surface is meant to be used on
  mass: array - Effective local sample size per x
  status: array[str] - PointStatus per x
  kind: str - "density" or "cdf"

RAISES:
  ValidationError: shape mismatch, non-ascending grids, negative values

GUARANTEES:
  - Arrays are read-only
  - normalized is True where the y-integral of a density row lies in [0.9, 1.1]
"""
@dataclass(frozen=True, eq=False)
class DensitySurface:
    x_grid: FloatArray
    y_grid: FloatArray
    density: FloatArray
    delta: float
    lag: int
    bandwidths: tuple[float, float]
    truncation: tuple[float, float]
    mass: FloatArray
    status: np.ndarray
    kind: str = "density"
    diagnostics: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        xg = np.array(self.x_grid, dtype=np.float64).reshape(-1)
        yg = np.array(self.y_grid, dtype=np.float64).reshape(-1)
        values = np.array(self.density, dtype=np.float64)
        if values.shape != (xg.size, yg.size):
            raise ValidationError(
                "surface shape must be (len(x_grid), len(y_grid))",
                details={"shape": list(values.shape), "x": int(xg.size), "y": int(yg.size)},
            )
        if np.any(np.diff(xg) <= 0) or np.any(np.diff(yg) <= 0) or yg.size < 2:
            raise ValidationError("surface grids must be strictly ascending")
        if np.any(values < 0):
            raise ValidationError("surface values must be >= 0")
        if self.kind not in {"density", "cdf"}:
            raise ValidationError("kind must be 'density' or 'cdf'", details={"kind": self.kind})
        mass = np.array(self.mass, dtype=np.float64).reshape(-1)
        status = np.array(self.status, dtype=object).reshape(-1)
        for array in (xg, yg, values, mass, status):
            array.setflags(write=False)
        object.__setattr__(self, "x_grid", xg)
        object.__setattr__(self, "y_grid", yg)
        object.__setattr__(self, "density", values)
        object.__setattr__(self, "mass", mass)
        object.__setattr__(self, "status", status)
        object.__setattr__(self, "diagnostics", MappingProxyType(dict(self.diagnostics)))

    @property
    def integrals(self) -> FloatArray:
        """Trapezoid integral over y per x (density surfaces)."""
        return integrate.trapezoid(self.density, self.y_grid, axis=1)

    @property
    def normalized(self) -> npt.NDArray[np.bool_]:
        low, high = NORMALIZATION_BAND
        return (self.integrals >= low) & (self.integrals <= high)

    @property
    def central(self) -> npt.NDArray[np.bool_]:
        """x-grid points inside the truncation interval."""
        low, high = self.truncation
        return (self.x_grid >= low) & (self.x_grid <= high)


def truncation_region(path: SamplePath, quantiles: tuple[float, float] = TRUNCATION_QUANTILES) -> tuple[float, float]:
    """Data-dense state interval [q_low, q_high] of the observations."""
    low, high = np.quantile(path.values, quantiles)
    if not high > low:
        raise ValidationError("observations have no spread inside the truncation quantiles")
    return float(low), float(high)


def _check_truncation(truncation: Optional[tuple[float, float]], path: SamplePath) -> tuple[float, float]:
    if truncation is None:
        return truncation_region(path)
    low, high = (float(v) for v in truncation)
    if not (math.isfinite(low) and math.isfinite(high) and low < high):
        raise ValidationError("truncation must be a finite interval (lower, upper)", details={"truncation": [low, high]})
    return low, high


def _pairs(path: SamplePath, lag: int) -> tuple[FloatArray, FloatArray]:
    x, y = increments(path, lag)
    if x.size < MIN_PATH_LENGTH:
        raise ValidationError(
            "transition-density estimation needs at least 100 transitions",
            details={"transitions": int(x.size), "lag": lag},
        )
    return x, y


def resolve_bandwidths(
    x: FloatArray, y: FloatArray, h1: Optional[float], h2: Optional[float]
) -> tuple[float, float]:
    """h1 by the reference rule; h2 by conditional-density cross-validation around the increment scale."""
    if h1 is None:
        h1 = silverman_bandwidth(x, X_KERNEL)
    if h2 is None:
        reference = silverman_bandwidth(y - x, KernelShape.GAUSSIAN)
        h2 = select_bandwidth_cv(
            x,
            y,
            KernelShape.GAUSSIAN,
            [reference * f for f in H2_CANDIDATE_FACTORS],
            mode=CVMode.CONDITIONAL_DENSITY,
            h_x=h1,
        )
    if not (h1 > 0 and h2 > 0):
        raise ValidationError("bandwidths must be > 0", details={"h1": h1, "h2": h2})
    return float(h1), float(h2)


def _ascending(grid: npt.ArrayLike, name: str) -> FloatArray:
    g = np.asarray(grid, dtype=np.float64).reshape(-1)
    if g.size < 2 or not np.all(np.isfinite(g)) or np.any(np.diff(g) <= 0):
        raise ValidationError(f"{name} must be a strictly ascending finite grid with >= 2 points")
    return g


def _double_kernel(
    x: FloatArray, y: FloatArray, h1: float, h2: float, x_points: FloatArray, y_points: FloatArray
) -> tuple[FloatArray, FloatArray, np.ndarray]:
    """sum_i K_n(x_i - x) W(y_i - y) for every (x, y) pair of the grids."""
    weights, mass, status = local_linear_weights(x, KernelSpec(X_KERNEL, h1), x_points)
    out = np.zeros((x_points.size, y_points.size))
    for chunk in chunked(x.size, max(1, BLOCK_ELEMENTS // y_points.size)):
        w_y = stats.norm.pdf((y[chunk, None] - y_points[None, :]) / h2) / h2
        out += weights[:, chunk] @ w_y
    return out, mass, status


"""
GOAL: Estimate the transition density p(y | x) over lag steps on a grid.

PARAMETERS:
  path: SamplePath - Observations - at least 100 valid transitions
  h1: Optional[float] - x bandwidth (default: reference rule)
  h2: Optional[float] - y bandwidth (default: conditional-density cross-validation)
  x_grid: Optional[array] - Conditioning states (default: grid_points() over the truncation interval)
  y_grid: Optional[array] - Next states (default: data range widened by 4 h2)
  lag: int - Steps per transition
  truncation: Optional[tuple[float, float]] - State interval (default: 5%-95% quantiles)

RETURNS:
  DensitySurface - kind "density"

RAISES:
  ValidationError: short path, bad grids or bandwidths

GUARANTEES:
  - Values are >= 0; negative local-linear values are clipped and the x row marked clipped
  - Rows with low mass or degenerate designs keep their status from the smoother
  - Affine maps of data, grids and bandwidths scale the density by the inverse Jacobian
"""
def estimate_transition_density(
    path: SamplePath,
    h1: Optional[float] = None,
    h2: Optional[float] = None,
    x_grid: Optional[npt.ArrayLike] = None,
    y_grid: Optional[npt.ArrayLike] = None,
    lag: int = 1,
    truncation: Optional[tuple[float, float]] = None,
) -> DensitySurface:
    x, y = _pairs(path, lag)
    region = _check_truncation(truncation, path)
    h1, h2 = resolve_bandwidths(x, y, h1, h2)
    xg = np.linspace(region[0], region[1], grid_points()) if x_grid is None else _ascending(x_grid, "x_grid")
    if y_grid is None:
        pad = Y_TAIL_BANDWIDTHS * h2
        yg = np.linspace(float(y.min()) - pad, float(y.max()) + pad, max(2 * grid_points(), 200))
    else:
        yg = _ascending(y_grid, "y_grid")

    blocks = chunked(xg.size, max(1, BLOCK_ELEMENTS // x.size))
    parts = parallel_map(lambda s: _double_kernel(x, y, h1, h2, xg[s], yg), blocks)
    raw = np.vstack([p[0] for p in parts])
    mass = np.concatenate([p[1] for p in parts])
    status = np.concatenate([p[2] for p in parts])

    negative = raw < 0
    clipped_rows = negative.any(axis=1)
    status[clipped_rows & (status == PointStatus.OK.value)] = PointStatus.CLIPPED.value
    density = np.where(negative, 0.0, raw)
    if clipped_rows.any():
        logger.info("transition density: clipped negative values in %d of %d x rows", int(clipped_rows.sum()), xg.size)

    surface = DensitySurface(
        x_grid=xg,
        y_grid=yg,
        density=density,
        delta=path.delta * lag,
        lag=lag,
        bandwidths=(h1, h2),
        truncation=region,
        mass=mass,
        status=status,
        diagnostics={"clipped_rows": int(clipped_rows.sum()), "n_transitions": int(x.size)},
    )
    off = surface.central & ~surface.normalized
    if off.any():
        logger.warning("transition density: %d central x rows integrate outside [0.9, 1.1]", int(off.sum()))
    return surface


"""
GOAL: Turn a density surface into the conditional distribution P(X_next <= y | x).

PARAMETERS:
  surface: DensitySurface - kind "density"

RETURNS:
  DensitySurface - kind "cdf"; rows non-decreasing in y, within [0, 1], ending at 1

RAISES:
  ValidationError: the surface is already a distribution

GUARANTEES:
  - diagnostics["final_before_normalization"] keeps each row's total integral
  - Rows with zero total mass stay at zero
"""
def estimate_transition_distribution(surface: DensitySurface) -> DensitySurface:
    if surface.kind != "density":
        raise ValidationError("expected a density surface", details={"kind": surface.kind})
    cumulative = integrate.cumulative_trapezoid(surface.density, surface.y_grid, axis=1, initial=0.0)
    totals = cumulative[:, -1].copy()
    with np.errstate(invalid="ignore", divide="ignore"):
        cumulative = np.where(totals[:, None] > 0, cumulative / totals[:, None], 0.0)
    cumulative = np.clip(np.maximum.accumulate(cumulative, axis=1), 0.0, 1.0)
    return DensitySurface(
        x_grid=surface.x_grid,
        y_grid=surface.y_grid,
        density=cumulative,
        delta=surface.delta,
        lag=surface.lag,
        bandwidths=surface.bandwidths,
        truncation=surface.truncation,
        mass=surface.mass,
        status=surface.status,
        kind="cdf",
        diagnostics={**surface.diagnostics, "final_before_normalization": totals.tolist()},
    )


def parametric_surface(
    model: ModelSpec,
    delta: float,
    x_grid: npt.ArrayLike,
    y_grid: npt.ArrayLike,
    truncation: tuple[float, float],
    kind: str = "density",
    lag: int = 1,
) -> DensitySurface:
    """Closed-form transition density or distribution of a model on the same layout as an estimate."""
    xg = _ascending(x_grid, "x_grid")
    yg = _ascending(y_grid, "y_grid")
    law = transition_density if kind == "density" else transition_cdf
    values = np.asarray(law(model, delta, xg[:, None], yg[None, :]), dtype=np.float64)
    values = np.nan_to_num(np.maximum(values, 0.0), nan=0.0)
    return DensitySurface(
        x_grid=xg,
        y_grid=yg,
        density=values,
        delta=delta,
        lag=lag,
        bandwidths=(math.nan, math.nan),
        truncation=truncation,
        mass=np.full(xg.size, np.inf),
        status=np.full(xg.size, PointStatus.OK.value, dtype=object),
        kind=kind,
        diagnostics={"family": model.family.value, "parametric": True},
    )


"""
GOAL: Evaluate the double-kernel transition density at observed pairs (X_i, X_{i+lag}).

PARAMETERS:
  path: SamplePath - Observations
  h1: float - x bandwidth - > 0
  h2: float - y bandwidth - > 0
  index: array[int] - Positions into the valid lag pairs to evaluate at
  lag: int - Steps per transition

RETURNS:
  FloatArray - p(X_{i+lag} | X_i) per requested pair (may be <= 0 where the local-linear weights go negative)
"""
def density_at_pairs(path: SamplePath, h1: float, h2: float, index: npt.ArrayLike, lag: int = 1) -> FloatArray:
    x, y = increments(path, lag)
    idx = np.asarray(index, dtype=np.int64).reshape(-1)
    kernel = KernelSpec(X_KERNEL, h1)

    def block(s: slice) -> FloatArray:
        rows = idx[s]
        weights, _, _ = local_linear_weights(x, kernel, x[rows])
        w_y = stats.norm.pdf((y[None, :] - y[rows, None]) / h2) / h2
        return np.einsum("ij,ij->i", weights, w_y)

    if idx.size == 0:
        return np.empty(0)
    return np.concatenate(parallel_map(block, chunked(idx.size, max(1, BLOCK_ELEMENTS // x.size))))
