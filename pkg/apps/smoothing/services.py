"""
Kernel smoothers: density estimation, Nadaraya-Watson and local-linear regression.

Estimators are evaluated on a grid. Kernel weights for a block of grid points
are materialized as a dense (grid, data) matrix, so grid blocks are sized to
keep that matrix bounded and run through parallel_map.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import numpy.typing as npt

from apps.core.conf import grid_points
from apps.core.exceptions import ValidationError
from apps.core.parallel import chunked, parallel_map
from apps.smoothing.curves import CurveEstimate, PointStatus, status_from_mass
from apps.smoothing.kernels import KernelSpec, kernel_values

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]

BLOCK_ELEMENTS = 2_000_000
# (S0 S2 - S1^2) / S0^2 in bandwidth units below this marks a singular local design
DEGENERATE_TOLERANCE = 1e-12


def _as_data(values: npt.ArrayLike, name: str, minimum: int = 2) -> FloatArray:
    array = np.asarray(values, dtype=np.float64).reshape(-1)
    if array.size < minimum:
        raise ValidationError(
            f"{name} needs at least {minimum} observations", details={"name": name, "length": int(array.size)}
        )
    if not np.all(np.isfinite(array)):
        raise ValidationError(f"{name} contains non-finite values", details={"name": name})
    return array


def _paired(x: npt.ArrayLike, y: npt.ArrayLike) -> tuple[FloatArray, FloatArray]:
    xa = _as_data(x, "x")
    ya = _as_data(y, "y")
    if xa.size != ya.size:
        raise ValidationError("x and y must have equal lengths", details={"x": int(xa.size), "y": int(ya.size)})
    return xa, ya


"""
GOAL: Default evaluation grid between two sample quantiles of the regressor.

PARAMETERS:
  x: array - Regressor sample - length >= 2
  n: Optional[int] - Number of points (default DIFFLAB_GRID_POINTS)
  lower_q: float - Lower quantile - in [0, 1)
  upper_q: float - Upper quantile - in (lower_q, 1]

RETURNS:
  FloatArray - n equispaced points

RAISES:
  ValidationError: bad quantiles, n < 2, or a sample with no spread
"""
def default_grid(
    x: npt.ArrayLike, n: Optional[int] = None, lower_q: float = 0.01, upper_q: float = 0.99
) -> FloatArray:
    data = _as_data(x, "x")
    n = grid_points() if n is None else int(n)
    if n < 2 or not (0.0 <= lower_q < upper_q <= 1.0):
        raise ValidationError("invalid grid request", details={"n": n, "lower_q": lower_q, "upper_q": upper_q})
    lower, upper = np.quantile(data, [lower_q, upper_q])
    if not upper > lower:
        raise ValidationError("regressor has no spread between the requested quantiles")
    return np.linspace(lower, upper, n)


def _grid(x: FloatArray, grid: Optional[npt.ArrayLike]) -> FloatArray:
    if grid is None:
        return default_grid(x)
    g = np.asarray(grid, dtype=np.float64).reshape(-1)
    if g.size == 0 or not np.all(np.isfinite(g)):
        raise ValidationError("grid must be a non-empty finite sequence")
    return g


def _blocks(n_grid: int, n_data: int) -> list[slice]:
    return chunked(n_grid, max(1, BLOCK_ELEMENTS // max(n_data, 1)))


def kernel_matrix(x: FloatArray, kernel: KernelSpec, grid: FloatArray) -> FloatArray:
    """K_h(x_i - g) as a (grid, data) matrix."""
    return kernel.weights(x[None, :] - grid[:, None])


def effective_mass(weights: FloatArray) -> FloatArray:
    """Kish effective sample size (sum w)^2 / sum w^2 per row; 0 for empty rows."""
    total = weights.sum(axis=1)
    squares = np.einsum("ij,ij->i", weights, weights)
    with np.errstate(invalid="ignore", divide="ignore"):
        mass = np.where(squares > 0, total * total / squares, 0.0)
    return mass


"""
GOAL: Kernel density estimate f(x) = n^-1 sum K_h(X_i - x) on a grid.

PARAMETERS:
  data: array - Sample - length >= 2, finite
  kernel: KernelSpec - Kernel and bandwidth
  grid: Optional[array] - Evaluation points (default_grid when omitted)

RETURNS:
  CurveEstimate - value f, stderr sqrt(f R(K) / (n h)), mass = Kish effective size

RAISES:
  ValidationError: fewer than two observations or non-finite data

GUARANTEES:
  - value >= 0; strictly positive everywhere for the gaussian kernel
"""
def kernel_density(data: npt.ArrayLike, kernel: KernelSpec, grid: Optional[npt.ArrayLike] = None) -> CurveEstimate:
    x = _as_data(data, "data")
    g = _grid(x, grid)
    n = x.size

    def block(s: slice) -> tuple[FloatArray, FloatArray]:
        w = kernel_matrix(x, kernel, g[s])
        return w.sum(axis=1) / n, effective_mass(w)

    parts = parallel_map(block, _blocks(g.size, n))
    density = np.concatenate([p[0] for p in parts])
    mass = np.concatenate([p[1] for p in parts])
    stderr = np.sqrt(density * kernel.roughness / (n * kernel.bandwidth))
    return CurveEstimate(
        g, density, stderr, mass, diagnostics={"estimator": "kernel_density", "bandwidth": kernel.bandwidth, "n": n}
    )


"""
GOAL: Nadaraya-Watson regression m(x) = sum y_i K_h(x_i - x) / sum K_h(x_i - x).

PARAMETERS:
  x: array - Regressor - length >= 2
  y: array - Response - same length as x
  kernel: KernelSpec - Kernel and bandwidth
  grid: Optional[array] - Evaluation points

RETURNS:
  CurveEstimate - stderr^2 = sum p_i^2 (y_i - m(x))^2 with p_i the normalized weights

RAISES:
  ValidationError: unequal lengths or too few observations

GUARANTEES:
  - Grid points with zero kernel mass get value NaN and status empty; never raises for them
"""
def nadaraya_watson(
    x: npt.ArrayLike, y: npt.ArrayLike, kernel: KernelSpec, grid: Optional[npt.ArrayLike] = None
) -> CurveEstimate:
    xa, ya = _paired(x, y)
    g = _grid(xa, grid)

    def block(s: slice) -> tuple[FloatArray, FloatArray, FloatArray]:
        w = kernel_matrix(xa, kernel, g[s])
        total = w.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            p = w / total[:, None]
            value = p @ ya
            residual = ya[None, :] - value[:, None]
            stderr = np.sqrt(np.einsum("ij,ij->i", p * p, residual * residual))
        return value, stderr, effective_mass(w)

    parts = parallel_map(block, _blocks(g.size, xa.size))
    value, stderr, mass = (np.concatenate([p[k] for p in parts]) for k in range(3))
    empty = mass <= 0
    value[empty] = np.nan
    stderr[empty] = np.nan
    return CurveEstimate(
        g, value, stderr, mass, diagnostics={"estimator": "nadaraya_watson", "bandwidth": kernel.bandwidth}
    )


@dataclass(frozen=True)
class LocalLinearBlock:
    """Equivalent-kernel rows for a block of grid points."""

    level: FloatArray
    slope: FloatArray
    offsets: FloatArray
    mass: FloatArray
    status: np.ndarray


def equivalent_kernel(
    u: FloatArray, w: FloatArray, h: float
) -> tuple[FloatArray, FloatArray, npt.NDArray[np.bool_]]:
    """Level and slope weights of the local-linear fit from standardized offsets u and kernel weights w."""
    s0 = w.sum(axis=1)
    s1 = np.einsum("ij,ij->i", w, u)
    s2 = np.einsum("ij,ij->i", w, u * u)
    det = s0 * s2 - s1 * s1
    with np.errstate(invalid="ignore", divide="ignore"):
        degenerate = (s0 <= 0) | (det <= DEGENERATE_TOLERANCE * s0 * s0)
        safe = np.where(degenerate, 1.0, det)
        level = w * (s2[:, None] - u * s1[:, None]) / safe[:, None]
        slope = w * (s0[:, None] * u - s1[:, None]) / (safe[:, None] * h)
        fallback = w / np.where(s0 > 0, s0, 1.0)[:, None]
    level[degenerate] = fallback[degenerate]
    slope[degenerate] = 0.0
    return level, slope, degenerate


def _local_linear_block(x: FloatArray, kernel: KernelSpec, grid: FloatArray) -> LocalLinearBlock:
    h = kernel.bandwidth
    u = (x[None, :] - grid[:, None]) / h
    w = kernel_values(kernel.shape, u) / h
    level, slope, degenerate = equivalent_kernel(u, w, h)
    s0 = w.sum(axis=1)
    mass = effective_mass(w)
    status = status_from_mass(mass)
    status[degenerate & (s0 > 0)] = PointStatus.DEGENERATE.value
    return LocalLinearBlock(level, slope, u * h, mass, status)


def _local_linear_blocks(x: FloatArray, kernel: KernelSpec, grid: FloatArray, fn):
    return parallel_map(lambda s: fn(_local_linear_block(x, kernel, grid[s])), _blocks(grid.size, x.size))


"""
GOAL: Local-linear equivalent kernel K_n(x_i - x, x) for every grid point.

PARAMETERS:
  x: array - Regressor - length >= 2
  kernel: KernelSpec - Kernel and bandwidth
  grid: array - Evaluation points

RETURNS:
  tuple[FloatArray, FloatArray, ndarray] - (weights [grid, data], mass, status)

GUARANTEES:
  - On non-degenerate rows: sum K_n = 1 and sum K_n (x_i - x) = 0 up to round-off
  - Degenerate rows fall back to Nadaraya-Watson weights and carry status degenerate
  - Rows with zero kernel mass are all zero with status empty
"""
def local_linear_weights(
    x: npt.ArrayLike, kernel: KernelSpec, grid: npt.ArrayLike
) -> tuple[FloatArray, FloatArray, np.ndarray]:
    xa = _as_data(x, "x")
    g = _grid(xa, grid)
    parts = _local_linear_blocks(xa, kernel, g, lambda b: (b.level, b.mass, b.status))
    return (
        np.vstack([p[0] for p in parts]),
        np.concatenate([p[1] for p in parts]),
        np.concatenate([p[2] for p in parts]),
    )


def _fit(x: FloatArray, y: FloatArray, kernel: KernelSpec, grid: FloatArray):
    def fit_block(b: LocalLinearBlock):
        level = b.level @ y
        slope = b.slope @ y
        residual = y[None, :] - level[:, None] - slope[:, None] * b.offsets
        r2 = residual * residual
        level_se = np.sqrt(np.einsum("ij,ij->i", b.level * b.level, r2))
        slope_se = np.sqrt(np.einsum("ij,ij->i", b.slope * b.slope, r2))
        return level, level_se, slope, slope_se, b.mass, b.status

    parts = _local_linear_blocks(x, kernel, grid, fit_block)
    level, level_se, slope, slope_se, mass = (np.concatenate([p[k] for p in parts]) for k in range(5))
    status = np.concatenate([p[5] for p in parts])
    empty = status == PointStatus.EMPTY.value
    for array in (level, level_se, slope, slope_se):
        array[empty] = np.nan
    degenerate = status == PointStatus.DEGENERATE.value
    slope[degenerate] = np.nan
    slope_se[degenerate] = np.nan
    return level, level_se, slope, slope_se, mass, status


"""
GOAL: Local-linear regression m(x) = sum K_n(x_i - x, x) y_i.

PARAMETERS:
  x: array - Regressor - length >= 2
  y: array - Response - same length
  kernel: KernelSpec - Kernel and bandwidth
  grid: Optional[array] - Evaluation points

RETURNS:
  CurveEstimate - sandwich stderr^2 = sum K_n^2 (y_i - m - b (x_i - x))^2

RAISES:
  ValidationError: unequal lengths or too few observations

GUARANTEES:
  - Affine responses are reproduced at every non-degenerate point
  - Degenerate windows are flagged in status, never raised
"""
def local_linear(
    x: npt.ArrayLike, y: npt.ArrayLike, kernel: KernelSpec, grid: Optional[npt.ArrayLike] = None
) -> CurveEstimate:
    xa, ya = _paired(x, y)
    g = _grid(xa, grid)
    level, level_se, _, _, mass, status = _fit(xa, ya, kernel, g)
    n_degenerate = int(np.sum(status == PointStatus.DEGENERATE.value))
    if n_degenerate:
        logger.warning("local_linear: %d of %d grid points have a singular local design", n_degenerate, g.size)
    return CurveEstimate(
        g,
        level,
        level_se,
        mass,
        status,
        diagnostics={"estimator": "local_linear", "bandwidth": kernel.bandwidth, "degenerate_points": n_degenerate},
    )


def local_linear_slope(
    x: npt.ArrayLike, y: npt.ArrayLike, kernel: KernelSpec, grid: Optional[npt.ArrayLike] = None
) -> CurveEstimate:
    """Slope of the local-linear fit; NaN at degenerate points."""
    xa, ya = _paired(x, y)
    g = _grid(xa, grid)
    _, _, slope, slope_se, mass, status = _fit(xa, ya, kernel, g)
    return CurveEstimate(
        g, slope, slope_se, mass, status, diagnostics={"estimator": "local_linear_slope", "bandwidth": kernel.bandwidth}
    )

