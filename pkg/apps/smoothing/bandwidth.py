"""
Bandwidth selection: reference rule and cross-validation.
"""

from __future__ import annotations

import enum
import logging
import math
from typing import Optional, Sequence

import numpy as np
import numpy.typing as npt
from scipy import integrate, stats

from apps.core.exceptions import NumericalError, ValidationError
from apps.core.parallel import parallel_map
from apps.smoothing.kernels import KernelShape, KernelSpec, kernel_values
from apps.smoothing.services import BLOCK_ELEMENTS, equivalent_kernel

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]

MIN_OBSERVATIONS = 20
MAX_EVALUATION_POINTS = 2000
MAX_NEIGHBOURS = 400
DENSITY_GRID_POINTS = 1024
# a candidate fails when more than this share of its evaluation points is degenerate
MAX_DEGENERATE_SHARE = 0.1

# Canonical-kernel ratio between the Epanechnikov and Gaussian reference rules
_EPANECHNIKOV_FACTOR = 2.214


class CVMode(str, enum.Enum):
    REGRESSION = "regression"
    DENSITY = "density"
    CONDITIONAL_DENSITY = "conditional_density"


def silverman_bandwidth(x: npt.ArrayLike, shape: KernelShape = KernelShape.GAUSSIAN) -> float:
    """0.9 min(sd, IQR / 1.34) n^-1/5, rescaled for compact kernels."""
    data = np.asarray(x, dtype=np.float64).reshape(-1)
    if data.size < 2:
        raise ValidationError("reference bandwidth needs at least two observations")
    q75, q25 = np.percentile(data, [75, 25])
    spread = min(float(np.std(data, ddof=1)), float(q75 - q25) / 1.34)
    if spread <= 0:
        spread = float(np.std(data, ddof=1))
    if spread <= 0:
        raise ValidationError("reference bandwidth needs a sample with spread")
    h = 0.9 * spread * data.size ** (-0.2)
    if KernelShape(shape) is not KernelShape.GAUSSIAN:
        h *= _EPANECHNIKOV_FACTOR
    return float(h)


def _evaluation_index(n: int) -> npt.NDArray[np.int64]:
    return np.unique(np.linspace(0, n - 1, min(n, MAX_EVALUATION_POINTS)).astype(np.int64))


def _row_blocks(n_rows: int, n_cols: int) -> list[slice]:
    size = max(1, BLOCK_ELEMENTS // max(n_cols, 1))
    return [slice(start, min(start + size, n_rows)) for start in range(0, n_rows, size)]


# ---------------------------------------------------------------------------
# Criteria. Each returns (per-point losses, per-point validity).
# ---------------------------------------------------------------------------

def _regression_losses(x: FloatArray, y: FloatArray, kernel: KernelSpec) -> tuple[FloatArray, npt.NDArray[np.bool_]]:
    """Leave-one-out local-linear squared prediction errors at the evaluation points."""
    idx = _evaluation_index(x.size)
    h = kernel.bandwidth

    def block(s: slice) -> tuple[FloatArray, npt.NDArray[np.bool_]]:
        rows = idx[s]
        u = (x[None, :] - x[rows, None]) / h
        w = kernel_values(kernel.shape, u) / h
        w[np.arange(rows.size), rows] = 0.0
        level, _, degenerate = equivalent_kernel(u, w, h)
        error = y[rows] - level @ y
        return error * error, ~degenerate

    parts = parallel_map(block, _row_blocks(idx.size, x.size))
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def _density_score(x: FloatArray, kernel: KernelSpec) -> float:
    """Least-squares CV: int f^2 - 2 mean f_{-i}(X_i)."""
    n = x.size
    h = kernel.bandwidth
    reach = 5.0 * h if kernel.shape is KernelShape.GAUSSIAN else h
    grid = np.linspace(x.min() - reach, x.max() + reach, DENSITY_GRID_POINTS)

    def on_grid(s: slice) -> FloatArray:
        return kernel.weights(x[None, :] - grid[s, None]).sum(axis=1) / n

    density = np.concatenate(parallel_map(on_grid, _row_blocks(grid.size, n)))
    square_integral = float(integrate.trapezoid(density * density, grid))

    idx = _evaluation_index(n)

    def leave_one_out(s: slice) -> FloatArray:
        rows = idx[s]
        w = kernel.weights(x[None, :] - x[rows, None])
        w[np.arange(rows.size), rows] = 0.0
        return w.sum(axis=1) / (n - 1)

    loo = np.concatenate(parallel_map(leave_one_out, _row_blocks(idx.size, n)))
    return square_integral - 2.0 * float(loo.mean())


def _conditional_density_losses(
    x: FloatArray, y: FloatArray, x_kernel: KernelSpec, h_y: float
) -> tuple[FloatArray, npt.NDArray[np.bool_]]:
    """
    Per-point CV loss int p_{-i}(y | X_i)^2 dy - 2 p_{-i}(Y_i | X_i) with Nadaraya-Watson
    weights in x and a Gaussian kernel in y, restricted to the heaviest x-neighbours.
    """
    idx = _evaluation_index(x.size)
    norm_2h = stats.norm(scale=math.sqrt(2.0) * h_y)
    norm_h = stats.norm(scale=h_y)

    def one(i: int) -> tuple[float, bool]:
        w = x_kernel.weights(x - x[i])
        w[i] = 0.0
        support = np.flatnonzero(w > 0)
        if support.size > MAX_NEIGHBOURS:
            support = support[np.argsort(w[support])[-MAX_NEIGHBOURS:]]
        total = w[support].sum()
        if support.size < 2 or total <= 0:
            return 0.0, False
        p = w[support] / total
        ys = y[support]
        square = float(p @ norm_2h.pdf(ys[:, None] - ys[None, :]) @ p)
        cross = float(p @ norm_h.pdf(y[i] - ys))
        return square - 2.0 * cross, True

    parts = parallel_map(one, idx.tolist())
    return np.array([p[0] for p in parts]), np.array([p[1] for p in parts], dtype=bool)


def _pick(candidates: Sequence[float], scores: FloatArray, scale: float) -> float:
    """Minimizer of the scores; near-ties go to the larger bandwidth."""
    best = float(np.min(scores))
    tolerance = 1e-9 * abs(best) + 1e-10 * scale
    tied = [h for h, s in zip(candidates, scores) if s <= best + tolerance]
    return float(max(tied))


"""
GOAL: Choose a bandwidth from a candidate set by cross-validation.

PARAMETERS:
  x: array - Regressor (or the sample itself in density mode) - length >= 20
  y: Optional[array] - Response; required for regression and conditional_density
  shape: KernelShape - Kernel used for the candidates
  candidates: Sequence[float] - Candidate bandwidths - non-empty, each > 0
  mode: CVMode - regression (leave-one-out local linear), density (least-squares CV)
                 or conditional_density (bandwidth of the y-kernel)
  h_x: Optional[float] - x-bandwidth in conditional_density mode (default: reference rule)

RETURNS:
  float - Selected bandwidth

RAISES:
  ValidationError: fewer than 20 observations, empty or invalid candidate set
  NumericalError: every candidate is degenerate; details list each candidate's state

GUARANTEES:
  - Ties (within a relative 1e-9) go to the largest tied candidate
  - Regression and conditional-density scores are averaged over the evaluation
    points valid for every surviving candidate
"""
def select_bandwidth_cv(
    x: npt.ArrayLike,
    y: Optional[npt.ArrayLike],
    shape: KernelShape,
    candidates: Sequence[float],
    mode: CVMode | str = CVMode.REGRESSION,
    h_x: Optional[float] = None,
) -> float:
    mode = CVMode(mode)
    xa = np.asarray(x, dtype=np.float64).reshape(-1)
    if xa.size < MIN_OBSERVATIONS:
        raise ValidationError(
            "cross-validation needs at least 20 observations", details={"length": int(xa.size)}
        )
    hs = [float(h) for h in candidates]
    if not hs or any(not (math.isfinite(h) and h > 0) for h in hs):
        raise ValidationError("candidate bandwidths must be a non-empty set of positive values", details={"candidates": hs})
    if mode is not CVMode.DENSITY:
        if y is None:
            raise ValidationError(f"{mode.value} cross-validation needs a response")
        ya = np.asarray(y, dtype=np.float64).reshape(-1)
        if ya.size != xa.size:
            raise ValidationError("x and y must have equal lengths")

    if mode is CVMode.DENSITY:
        scores = np.array([_density_score(xa, KernelSpec(shape, h)) for h in hs])
        choice = _pick(hs, scores, scale=1.0 / float(np.ptp(xa) or 1.0))
        logger.info("density CV over %d candidates selected h=%.6g", len(hs), choice)
        return choice

    if mode is CVMode.REGRESSION:
        results = [_regression_losses(xa, ya, KernelSpec(shape, h)) for h in hs]
    else:
        x_kernel = KernelSpec(shape, h_x if h_x is not None else silverman_bandwidth(xa, shape))
        results = [_conditional_density_losses(xa, ya, x_kernel, h) for h in hs]

    diagnostics = {}
    surviving = []
    for h, (_, valid) in zip(hs, results):
        share = 1.0 - float(valid.mean())
        diagnostics[repr(h)] = {"degenerate_share": share}
        if share <= MAX_DEGENERATE_SHARE:
            surviving.append(h)
    if not surviving:
        raise NumericalError("every candidate bandwidth is degenerate", details={"candidates": diagnostics})

    common = np.logical_and.reduce([valid for h, (_, valid) in zip(hs, results) if h in surviving])
    if not common.any():
        raise NumericalError("no evaluation point is valid for all candidates", details={"candidates": diagnostics})
    scores = np.array([float(losses[common].mean()) for h, (losses, _) in zip(hs, results) if h in surviving])
    scale = float(np.var(ya)) if mode is CVMode.REGRESSION else 1.0 / float(np.ptp(ya) or 1.0)
    choice = _pick(surviving, scores, scale)
    logger.info("%s CV over %d candidates selected h=%.6g", mode.value, len(hs), choice)
    return choice
