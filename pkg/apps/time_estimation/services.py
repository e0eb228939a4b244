"""
Time-domain fitting of time-varying CKLS coefficients.

Model: dX = (alpha0(t) + alpha1(t) X) dt + beta0(t) X^beta1(t) dW.

Coefficients are approximated as locally constant in time. Every fit at t0
uses only transitions that end at or before t0, weighted by a one-sided
kernel in time, so estimates at t0 never see later observations.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Any, Callable, Mapping, Optional, Sequence

import numpy as np
import numpy.typing as npt
from scipy import optimize
from statsmodels.tools.numdiff import approx_hess

from apps.core.conf import grid_points
from apps.core.exceptions import NumericalError, ValidationError
from apps.core.parallel import chunked, parallel_map
from apps.sde.paths import SamplePath
from apps.smoothing.curves import CurveEstimate, PointStatus, status_from_mass
from apps.smoothing.kernels import KernelSpec
from apps.smoothing.services import BLOCK_ELEMENTS, effective_mass

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]

MIN_PATH_LENGTH = 50
MIN_WINDOW_POINTS = 3
# E[log chi^2_1]
LOG_CHI2_MEAN = -1.2703628454614782
BETA1_BOUNDS = (-2.0, 4.0)
LOG_BETA0_BOUNDS = (-30.0, 10.0)
SEMIPARAMETRIC_BETA_GRID = np.round(np.arange(-0.5, 2.0001, 0.05), 10)
MAX_PREDICTION_POINTS = 1000


@dataclass(frozen=True)
class Transitions:
    """First differences of a path with their start times."""

    times: FloatArray
    x: FloatArray
    x_next: FloatArray
    delta: float

    @classmethod
    def of(cls, path: SamplePath) -> "Transitions":
        mask = path.transition_mask(1)
        return cls(path.times[:-1][mask], path.values[:-1][mask], path.values[1:][mask], path.delta)

    @property
    def y(self) -> FloatArray:
        return (self.x_next - self.x) / self.delta

    def residuals(self, alpha0: FloatArray, alpha1: FloatArray) -> FloatArray:
        """Normalized residuals (X_{i+1} - X_i - mu_i delta) / sqrt(delta)."""
        return (self.x_next - self.x - (alpha0 + alpha1 * self.x) * self.delta) / math.sqrt(self.delta)

    def subset(self, mask: npt.NDArray[np.bool_]) -> "Transitions":
        return Transitions(self.times[mask], self.x[mask], self.x_next[mask], self.delta)


"""
GOAL: Time-varying CKLS fit on a time grid.

PARAMETERS:
  t_grid: array - Ascending fit times inside the observed span
  alpha0, alpha1, beta0, beta1: CurveEstimate - Coefficient curves over t_grid
  bandwidths: Mapping[str, float] - Bandwidths used per stage
  loglik: float - Approximated Gaussian log-likelihood over the evaluated transitions

GUARANTEES:
  - beta0 > 0 wherever it is finite
"""
@dataclass(frozen=True, eq=False)
class TimeVaryingFit:
    t_grid: FloatArray
    alpha0: CurveEstimate
    alpha1: CurveEstimate
    beta0: CurveEstimate
    beta1: CurveEstimate
    bandwidths: Mapping[str, float]
    loglik: float
    diagnostics: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "bandwidths", MappingProxyType(dict(self.bandwidths)))
        object.__setattr__(self, "diagnostics", MappingProxyType(dict(self.diagnostics)))


def _require_one_sided(kernel: KernelSpec) -> None:
    if not kernel.one_sided:
        raise ValidationError(
            "time-domain fits need a one-sided kernel", details={"shape": kernel.shape.value}
        )


def _require_length(path: SamplePath, minimum: int = MIN_PATH_LENGTH) -> None:
    if path.values.size < minimum:
        raise ValidationError(
            f"path needs at least {minimum} observations", details={"length": int(path.values.size)}
        )


def default_time_grid(path: SamplePath, bandwidth: float, n: Optional[int] = None) -> FloatArray:
    """n fit times from the first full window to the last observation."""
    n = grid_points() if n is None else int(n)
    start = path.times[0] + bandwidth
    end = path.times[-1]
    if not start < end:
        raise ValidationError(
            "bandwidth is longer than the observed span", details={"bandwidth": bandwidth, "span": end - path.times[0]}
        )
    return np.linspace(start, end, n)


def _time_grid(path: SamplePath, kernel: KernelSpec, t_grid: Optional[npt.ArrayLike]) -> FloatArray:
    if t_grid is None:
        return default_time_grid(path, kernel.bandwidth)
    grid = np.asarray(t_grid, dtype=np.float64).reshape(-1)
    if grid.size == 0 or np.any(grid < path.times[0]) or np.any(grid > path.times[-1]):
        raise ValidationError("t_grid must lie within the observed time span")
    return grid


def time_weights(data: Transitions, kernel: KernelSpec, t_grid: FloatArray) -> FloatArray:
    """(grid, transition) weights K_h(t_i - t0), zero unless the transition ends by t0."""
    offsets = data.times[None, :] - t_grid[:, None]
    w = kernel.weights(offsets)
    ends_in_past = offsets + data.delta <= 1e-9 * data.delta
    return np.where(ends_in_past, w, 0.0)


def _blocks(n_grid: int, n_obs: int) -> list[slice]:
    return chunked(n_grid, max(1, BLOCK_ELEMENTS // max(n_obs, 1)))


def _window_status(w: FloatArray) -> tuple[FloatArray, np.ndarray, npt.NDArray[np.int64]]:
    mass = effective_mass(w)
    status = status_from_mass(mass)
    counts = np.count_nonzero(w > 0, axis=1)
    thin = (counts > 0) & (counts < MIN_WINDOW_POINTS)
    status[thin] = PointStatus.DEGENERATE.value
    return mass, status, counts


# ---------------------------------------------------------------------------
# Drift
# ---------------------------------------------------------------------------

def _weighted_line(
    w: FloatArray, x: FloatArray, y: FloatArray
) -> tuple[FloatArray, FloatArray, FloatArray, FloatArray, npt.NDArray[np.bool_]]:
    """Row-wise weighted least squares of y on (1, x) with HC0 sandwich standard errors."""
    s0 = w.sum(axis=1)
    s1 = w @ x
    s2 = w @ (x * x)
    t0 = w @ y
    t1 = w @ (x * y)
    det = s0 * s2 - s1 * s1
    with np.errstate(invalid="ignore", divide="ignore"):
        singular = (s0 <= 0) | (det <= 1e-12 * s0 * s2)
        safe = np.where(singular, 1.0, det)
        a0 = (s2 * t0 - s1 * t1) / safe
        a1 = (s0 * t1 - s1 * t0) / safe
        resid = y[None, :] - a0[:, None] - a1[:, None] * x[None, :]
        we = w * resid
        m00 = np.einsum("ij,ij->i", we, we)
        m01 = we * we @ x
        m11 = we * we @ (x * x)
        # (X'WX)^-1 = [[s2, -s1], [-s1, s0]] / det
        v00 = (s2 * s2 * m00 - 2 * s2 * s1 * m01 + s1 * s1 * m11) / (safe * safe)
        v11 = (s1 * s1 * m00 - 2 * s1 * s0 * m01 + s0 * s0 * m11) / (safe * safe)
    for array in (a0, a1, v00, v11):
        array[singular] = np.nan
    return a0, a1, np.sqrt(np.maximum(v00, 0.0)), np.sqrt(np.maximum(v11, 0.0)), singular


"""
GOAL: Local-constant drift coefficients alpha0(t), alpha1(t) by one-sided kernel-weighted least squares.

PARAMETERS:
  path: SamplePath - Observations - length >= 50
  kernel: KernelSpec - one_sided_epanechnikov, bandwidth in time units
  h: Optional[float] - Overrides the kernel's bandwidth
  t_grid: Optional[array] - Fit times (default: first full window to last observation)

RETURNS:
  tuple[CurveEstimate, CurveEstimate] - (alpha0, alpha1) over t_grid, HC0 sandwich stderr

RAISES:
  ValidationError: two-sided kernel, short path, t_grid outside the span

GUARANTEES:
  - The fit at t0 uses only transitions ending at or before t0
  - Windows with fewer than 3 transitions are flagged degenerate; empty windows have no value
"""
def fit_drift_time(
    path: SamplePath, kernel: KernelSpec, h: Optional[float] = None, t_grid: Optional[npt.ArrayLike] = None
) -> tuple[CurveEstimate, CurveEstimate]:
    _require_length(path)
    kernel = kernel if h is None else kernel.with_bandwidth(h)
    _require_one_sided(kernel)
    grid = _time_grid(path, kernel, t_grid)
    data = Transitions.of(path)
    parts = []
    for rows in _blocks(grid.size, data.x.size):
        w = time_weights(data, kernel, grid[rows])
        a0, a1, se0, se1, singular = _weighted_line(w, data.x, data.y)
        mass, status, counts = _window_status(w)
        status[singular & (counts > 0)] = PointStatus.DEGENERATE.value
        parts.append((a0, a1, se0, se1, mass, status))
    a0, a1, se0, se1, mass, status = (np.concatenate(column) for column in zip(*parts))
    bad = status != PointStatus.OK.value
    if bad.any():
        logger.debug("fit_drift_time: %d of %d fit times flagged", int(bad.sum()), grid.size)
    notes = {"estimator": "drift_time", "bandwidth": kernel.bandwidth}
    return (
        CurveEstimate(grid, a0, se0, mass, status.copy(), diagnostics=notes),
        CurveEstimate(grid, a1, se1, mass, status.copy(), diagnostics=notes),
    )


def _curve_at(curve: CurveEstimate, times: FloatArray) -> FloatArray:
    """Curve values at arbitrary times; constant beyond the ends of its finite points."""
    finite = np.isfinite(curve.value)
    if not finite.any():
        return np.full(times.shape, np.nan)
    return np.interp(times, curve.grid[finite], curve.value[finite])


# ---------------------------------------------------------------------------
# Volatility: local approximated likelihood in (log beta0, beta1)
# ---------------------------------------------------------------------------

def _negative_loglik(params: FloatArray, w: FloatArray, e2: FloatArray, logx: FloatArray) -> tuple[float, FloatArray]:
    b, beta1 = params
    r = e2 * np.exp(-2.0 * b - 2.0 * beta1 * logx)
    total = w.sum()
    value = float(np.sum(w * (b + beta1 * logx + 0.5 * r)) / total)
    slack = w * (1.0 - r)
    grad = np.array([slack.sum(), slack @ logx]) / total
    return value, grad


def _log_transform_start(w: FloatArray, e2: FloatArray, logx: FloatArray) -> tuple[float, float]:
    """Weighted least squares of log E^2 on (1, log X); starting point only."""
    z = np.log(e2 + 1e-300)
    s0, s1, s2 = w.sum(), w @ logx, w @ (logx * logx)
    det = s0 * s2 - s1 * s1
    slope = (s0 * (w @ (logx * z)) - s1 * (w @ z)) / det
    intercept = ((w @ z) - slope * s1) / s0
    beta1 = float(np.clip(slope / 2.0, *BETA1_BOUNDS))
    return float((intercept - LOG_CHI2_MEAN) / 2.0), beta1


@dataclass(frozen=True)
class LocalVolFit:
    beta0: float
    beta1: float
    se_beta0: float
    se_beta1: float
    status: str
    message: str = ""


def fit_local_vol(w: FloatArray, e2: FloatArray, logx: FloatArray) -> LocalVolFit:
    keep = w > 0
    if keep.sum() < MIN_WINDOW_POINTS:
        return LocalVolFit(math.nan, math.nan, math.nan, math.nan, PointStatus.EMPTY.value if not keep.any() else PointStatus.DEGENERATE.value)
    w, e2, logx = w[keep], e2[keep], logx[keep]
    spread = float(np.sqrt(np.average((logx - np.average(logx, weights=w)) ** 2, weights=w)))
    if spread < 1e-10:
        # X^beta1 is constant in the window, so beta1 is not identified
        beta0 = math.sqrt(float(np.average(e2, weights=w)))
        return LocalVolFit(beta0, math.nan, math.nan, math.nan, PointStatus.DEGENERATE.value, "beta1 not identified")

    start = np.array(_log_transform_start(w, e2, logx))
    start[0] = np.clip(start[0], *LOG_BETA0_BOUNDS)
    result = optimize.minimize(
        _negative_loglik,
        start,
        args=(w, e2, logx),
        jac=True,
        method="L-BFGS-B",
        bounds=[LOG_BETA0_BOUNDS, BETA1_BOUNDS],
        options={"ftol": 1e-10, "gtol": 1e-10, "maxiter": 500},
    )
    b, beta1 = (float(v) for v in result.x)
    r = e2 * np.exp(-2.0 * b - 2.0 * beta1 * logx)
    hessian = 2.0 * np.array([[w @ r, w @ (r * logx)], [w @ (r * logx), w @ (r * logx * logx)]])
    scores = np.vstack([1.0 - r, logx * (1.0 - r)]) * w
    meat = scores @ scores.T
    try:
        bread = np.linalg.inv(hessian)
        cov = bread @ meat @ bread
        se_b, se_beta1 = (float(math.sqrt(max(v, 0.0))) for v in np.diag(cov))
    except np.linalg.LinAlgError:
        se_b = se_beta1 = math.nan
    beta0 = math.exp(b)
    status = PointStatus.OK.value if result.success else PointStatus.NOT_CONVERGED.value
    return LocalVolFit(beta0, beta1, beta0 * se_b, se_beta1, status, "" if result.success else str(result.message))


def fit_local_vol_given_elasticity(w: FloatArray, e2: FloatArray, logx: FloatArray, beta1: float) -> LocalVolFit:
    """Closed-form local beta0 with beta1 held fixed: beta0^2 = weighted mean of E^2 / X^(2 beta1)."""
    keep = w > 0
    if keep.sum() < MIN_WINDOW_POINTS or not math.isfinite(beta1):
        status = PointStatus.EMPTY.value if not keep.any() else PointStatus.DEGENERATE.value
        return LocalVolFit(math.nan, beta1, math.nan, math.nan, status)
    p = w[keep] / w[keep].sum()
    scaled = e2[keep] * np.exp(-2.0 * beta1 * logx[keep])
    beta0_sq = float(p @ scaled)
    if beta0_sq <= 0:
        return LocalVolFit(0.0, beta1, math.nan, 0.0, PointStatus.DEGENERATE.value, "zero residuals in window")
    beta0 = math.sqrt(beta0_sq)
    se_beta0 = math.sqrt(float((p * p) @ (scaled - beta0_sq) ** 2)) / (2.0 * beta0)
    return LocalVolFit(beta0, beta1, se_beta0, 0.0, PointStatus.OK.value)


"""
GOAL: Local volatility coefficients beta0(t), beta1(t) from the normalized drift residuals.

PARAMETERS:
  path: SamplePath - Positive observations - length >= 50
  drift_fit: tuple[CurveEstimate, CurveEstimate] - (alpha0, alpha1) from fit_drift_time
  kernel: KernelSpec - one_sided_epanechnikov
  h: Optional[float] - Overrides the kernel's bandwidth
  t_grid: Optional[array] - Fit times
  beta1: Optional[float | array] - Elasticity held fixed (scalar or one value per fit time);
    beta0 then has the closed form sqrt(local mean of E^2 / X^(2 beta1))

RETURNS:
  tuple[CurveEstimate, CurveEstimate] - (beta0, beta1); sandwich stderr from the local likelihood,
    stderr 0 for a fixed beta1

RAISES:
  ValidationError: non-positive path, two-sided kernel, short path

GUARANTEES:
  - Non-convergence is flagged not_converged with the optimizer message in diagnostics
  - A window whose states are all equal flags beta1 degenerate
"""
def fit_vol_time(
    path: SamplePath,
    drift_fit: tuple[CurveEstimate, CurveEstimate],
    kernel: KernelSpec,
    h: Optional[float] = None,
    t_grid: Optional[npt.ArrayLike] = None,
    beta1: Optional[float | npt.ArrayLike] = None,
) -> tuple[CurveEstimate, CurveEstimate]:
    _require_length(path)
    if not path.is_positive:
        raise ValidationError("volatility fits in time need a positive path")
    kernel = kernel if h is None else kernel.with_bandwidth(h)
    _require_one_sided(kernel)
    grid = _time_grid(path, kernel, t_grid)
    data = Transitions.of(path)
    alpha0, alpha1 = drift_fit
    frozen = None
    if beta1 is not None:
        try:
            frozen = np.broadcast_to(np.asarray(beta1, dtype=np.float64), grid.shape)
        except ValueError as exc:
            raise ValidationError("beta1 needs one value per fit time", details={"fit_times": int(grid.size)}) from exc
    e = data.residuals(_curve_at(alpha0, data.times), _curve_at(alpha1, data.times))
    e2 = e * e
    logx = np.log(data.x)
    fits: list[LocalVolFit] = []
    masses, statuses = [], []
    for rows in _blocks(grid.size, data.x.size):
        w = time_weights(data, kernel, grid[rows])
        if frozen is None:
            fits.extend(parallel_map(lambda row: fit_local_vol(row, e2, logx), list(w)))
        else:
            fits.extend(fit_local_vol_given_elasticity(row, e2, logx, float(b)) for row, b in zip(w, frozen[rows]))
        mass, status, _ = _window_status(w)
        masses.append(mass)
        statuses.append(status)
    mass = np.concatenate(masses)
    status = np.concatenate(statuses)
    messages = {}
    for i, fit in enumerate(fits):
        if fit.status != PointStatus.OK.value:
            status[i] = fit.status
        if fit.message:
            messages[f"{grid[i]:.6g}"] = fit.message
    n_failed = int(np.sum(status == PointStatus.NOT_CONVERGED.value))
    if n_failed:
        logger.warning("fit_vol_time: optimizer did not converge at %d of %d fit times", n_failed, grid.size)
    notes = {"estimator": "vol_time", "bandwidth": kernel.bandwidth, "messages": messages}
    return (
        CurveEstimate(grid, [f.beta0 for f in fits], [f.se_beta0 for f in fits], mass, status.copy(), diagnostics=notes),
        CurveEstimate(grid, [f.beta1 for f in fits], [f.se_beta1 for f in fits], mass, status.copy(), diagnostics=notes),
    )


def gaussian_loglik(data: Transitions, alpha0, alpha1, beta0, beta1) -> float:
    """sum -log(beta0 X^beta1) - E^2 / (2 beta0^2 X^(2 beta1)) over the given transitions."""
    e = data.residuals(alpha0, alpha1)
    scale = beta0 * np.power(data.x, beta1)
    return float(np.sum(-np.log(scale) - e * e / (2.0 * scale * scale)))


def evaluation_mask(data: Transitions, t_grid: FloatArray) -> npt.NDArray[np.bool_]:
    """Transitions starting inside the fitted time range."""
    return (data.times >= t_grid[0]) & (data.times <= t_grid[-1])


def time_varying_loglik(path: SamplePath, fit_curves: Sequence[CurveEstimate]) -> tuple[float, int]:
    """Approximated log-likelihood of the curves over transitions inside the fitted range."""
    alpha0, alpha1, beta0, beta1 = fit_curves
    data = Transitions.of(path)
    mask = evaluation_mask(data, alpha0.grid)
    sub = data.subset(mask)
    coefficients = [_curve_at(c, sub.times) for c in (alpha0, alpha1, beta0, beta1)]
    return gaussian_loglik(sub, *coefficients), int(mask.sum())


def fit_time_varying(
    path: SamplePath, kernel: KernelSpec, t_grid: Optional[npt.ArrayLike] = None, h_vol: Optional[float] = None
) -> TimeVaryingFit:
    """fit_drift_time followed by fit_vol_time, with the approximated log-likelihood."""
    grid = _time_grid(path, kernel, t_grid)
    drift = fit_drift_time(path, kernel, t_grid=grid)
    vol = fit_vol_time(path, drift, kernel, h=h_vol, t_grid=grid)
    loglik, n_eval = time_varying_loglik(path, (*drift, *vol))
    return TimeVaryingFit(
        grid,
        drift[0],
        drift[1],
        vol[0],
        vol[1],
        {"drift": kernel.bandwidth, "vol": h_vol or kernel.bandwidth},
        loglik,
        {"n_evaluated": n_eval},
    )


# ---------------------------------------------------------------------------
# Semiparametric model: alpha1 and beta global, alpha0(t) and beta0(t) local
# ---------------------------------------------------------------------------

def _local_means(w: FloatArray, *series: FloatArray) -> list[FloatArray]:
    total = w.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return [np.where(total > 0, (w @ s) / total, np.nan) for s in series]


def _beta0_profile(w: FloatArray, e2: FloatArray, logx: FloatArray, beta: float) -> FloatArray:
    """Closed-form local beta0^2(t; beta) = weighted mean of E^2 / X^(2 beta)."""
    (value,) = _local_means(w, e2 * np.exp(-2.0 * beta * logx))
    return value


def _profile_loglik(
    beta: float, w: FloatArray, grid: FloatArray, data: Transitions, e2: FloatArray, logx: FloatArray, mask: npt.NDArray[np.bool_]
) -> float:
    beta0_sq = _beta0_profile(w, e2, logx, beta)
    finite = np.isfinite(beta0_sq) & (beta0_sq > 0)
    if not finite.any():
        return -math.inf
    at_times = np.interp(data.times[mask], grid[finite], beta0_sq[finite])
    scale_sq = at_times * np.exp(2.0 * beta * logx[mask])
    return float(np.sum(-0.5 * np.log(scale_sq) - e2[mask] / (2.0 * scale_sq)))


"""
GOAL: Fit dX = (alpha0(t) + alpha1 X) dt + beta0(t) X^beta dW with global alpha1 and beta.

PARAMETERS:
  path: SamplePath - Positive observations - length >= 50
  kernel: KernelSpec - one_sided_epanechnikov
  h: Optional[float] - Overrides the kernel's bandwidth
  t_grid: Optional[array] - Fit times

RETURNS:
  TimeVaryingFit - alpha1 and beta1 are constant curves; diagnostics carry the beta profile

RAISES:
  ValidationError: non-positive path, two-sided kernel, short path
  NumericalError: the beta profile is nowhere finite

GUARANTEES:
  - alpha1 by partial-linear least squares on locally centred data
  - beta0^2(t; beta) is the closed-form local mean; beta maximizes the assembled
    likelihood over [-0.5, 2]; a flat profile returns the largest candidate with a warning
"""
def fit_semiparametric(
    path: SamplePath, kernel: KernelSpec, h: Optional[float] = None, t_grid: Optional[npt.ArrayLike] = None
) -> TimeVaryingFit:
    _require_length(path)
    if not path.is_positive:
        raise ValidationError("semiparametric fits need a positive path")
    kernel = kernel if h is None else kernel.with_bandwidth(h)
    _require_one_sided(kernel)
    grid = _time_grid(path, kernel, t_grid)
    data = Transitions.of(path)
    w = time_weights(data, kernel, grid)
    mask = evaluation_mask(data, grid)
    y = data.y

    mean_y, mean_x = _local_means(w, y, data.x)
    usable = np.isfinite(mean_y)
    if usable.sum() < 2:
        raise ValidationError("too few fit times with data", details={"usable": int(usable.sum())})
    my = np.interp(data.times, grid[usable], mean_y[usable])
    mx = np.interp(data.times, grid[usable], mean_x[usable])
    dx, dy = (data.x - mx)[mask], (y - my)[mask]
    alpha1 = float(dx @ dy / (dx @ dx))
    alpha0_grid = mean_y - alpha1 * mean_x
    resid_drift = (y - my - alpha1 * (data.x - mx))[mask]
    alpha1_se = float(math.sqrt(np.sum(dx * dx * resid_drift * resid_drift)) / (dx @ dx))

    e = data.residuals(np.interp(data.times, grid[usable], alpha0_grid[usable]), alpha1)
    e2 = e * e
    logx = np.log(data.x)

    profile = np.array([_profile_loglik(b, w, grid, data, e2, logx, mask) for b in SEMIPARAMETRIC_BETA_GRID])
    if not np.isfinite(profile).any():
        raise NumericalError("semiparametric beta profile is not finite anywhere")
    spread = float(np.nanmax(profile) - np.nanmin(profile[np.isfinite(profile)]))
    if spread <= 1e-8 * max(1.0, abs(float(np.nanmax(profile)))):
        beta = float(SEMIPARAMETRIC_BETA_GRID[-1])
        logger.warning("fit_semiparametric: flat beta profile, using the largest candidate %.2f", beta)
        refined = False
    else:
        k = int(np.nanargmax(profile))
        lo = SEMIPARAMETRIC_BETA_GRID[max(k - 1, 0)]
        hi = SEMIPARAMETRIC_BETA_GRID[min(k + 1, SEMIPARAMETRIC_BETA_GRID.size - 1)]
        result = optimize.minimize_scalar(
            lambda b: -_profile_loglik(b, w, grid, data, e2, logx, mask), bounds=(lo, hi), method="bounded",
            options={"xatol": 1e-6},
        )
        beta = float(result.x) if result.fun <= -profile[k] else float(SEMIPARAMETRIC_BETA_GRID[k])
        refined = True
    curvature = approx_hess(np.array([beta]), lambda v: _profile_loglik(float(v[0]), w, grid, data, e2, logx, mask))
    beta_se = float(math.sqrt(-1.0 / curvature[0, 0])) if curvature[0, 0] < 0 else math.nan

    beta0_grid = np.sqrt(_beta0_profile(w, e2, logx, beta))
    mass, status, _ = _window_status(w)
    n = grid.size
    # local stderr of beta0 from the spread of E^2 / X^(2 beta) in the window
    scaled = e2 * np.exp(-2.0 * beta * logx)
    total = w.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = w / total[:, None]
        var_mean = np.einsum("ij,ij->i", p * p, (scaled[None, :] - beta0_grid[:, None] ** 2) ** 2)
        beta0_se = np.sqrt(var_mean) / (2.0 * beta0_grid)
        level = y - alpha1 * data.x
        alpha0_se = np.sqrt(np.einsum("ij,ij->i", p * p, (level[None, :] - alpha0_grid[:, None]) ** 2))
    notes = {"estimator": "semiparametric", "bandwidth": kernel.bandwidth}
    loglik = _profile_loglik(beta, w, grid, data, e2, logx, mask)
    return TimeVaryingFit(
        grid,
        CurveEstimate(grid, alpha0_grid, alpha0_se, mass, status.copy(), diagnostics=notes),
        CurveEstimate(grid, np.full(n, alpha1), np.full(n, alpha1_se), mass, status.copy(), diagnostics=notes),
        CurveEstimate(grid, beta0_grid, beta0_se, mass, status.copy(), diagnostics=notes),
        CurveEstimate(grid, np.full(n, beta), np.full(n, beta_se), mass, status.copy(), diagnostics=notes),
        {"drift": kernel.bandwidth, "vol": kernel.bandwidth},
        loglik,
        {
            "alpha1": alpha1,
            "beta": beta,
            "beta_se": beta_se,
            "refined": refined,
            "n_evaluated": int(mask.sum()),
            "profile": dict(zip(SEMIPARAMETRIC_BETA_GRID.tolist(), profile.tolist())),
        },
    )


# ---------------------------------------------------------------------------
# Bandwidth by out-of-sample prediction
# ---------------------------------------------------------------------------

DriftFitter = Callable[..., tuple[CurveEstimate, CurveEstimate]]


"""
GOAL: Choose the time bandwidth minimizing one-step-ahead prediction error.

PARAMETERS:
  path: SamplePath - Observations
  kernel: KernelSpec - one_sided_epanechnikov; its bandwidth is ignored
  candidates: Sequence[float] - Bandwidths in time units - non-empty, each > 0
  fitter: Callable - (path, kernel, t_grid=...) -> (alpha0, alpha1); default fit_drift_time

RETURNS:
  float - The candidate with the smallest mean squared prediction error of X_{t + delta}

RAISES:
  ValidationError: empty candidates or a burn-in of max(candidates) longer than the path
  NumericalError: no candidate produced a usable prediction; details per candidate

GUARANTEES:
  - Predictions at t use only data up to t
  - Every candidate is scored on the same prediction times (after a burn-in of max(h))
  - Ties go to the larger bandwidth
"""
def bandwidth_by_prediction(
    path: SamplePath,
    kernel: KernelSpec,
    candidates: Sequence[float],
    fitter: Optional[DriftFitter] = None,
) -> float:
    hs = sorted(float(h) for h in candidates)
    if not hs or hs[0] <= 0:
        raise ValidationError("candidates must be a non-empty set of positive bandwidths", details={"candidates": hs})
    if len(hs) == 1:
        return hs[0]
    fitter = fitter or fit_drift_time
    times = path.times
    origins = np.flatnonzero(times[:-1] >= times[0] + hs[-1])
    mask = path.transition_mask(1)
    origins = origins[mask[origins]]
    if origins.size < 2:
        raise ValidationError("path too short for a burn-in of the largest candidate", details={"largest": hs[-1]})
    if origins.size > MAX_PREDICTION_POINTS:
        origins = origins[np.unique(np.linspace(0, origins.size - 1, MAX_PREDICTION_POINTS).astype(np.int64))]

    x_now = path.values[origins]
    x_next = path.values[origins + 1]
    scores, diagnostics = [], {}
    for h in hs:
        alpha0, alpha1 = fitter(path, kernel.with_bandwidth(h), t_grid=times[origins])
        prediction = x_now + (alpha0.value + alpha1.value * x_now) * path.delta
        error = (x_next - prediction) ** 2
        usable = np.isfinite(error)
        diagnostics[repr(h)] = {"usable": int(usable.sum())}
        scores.append(error)
    common = np.logical_and.reduce([np.isfinite(e) for e in scores])
    if not common.any():
        raise NumericalError("no candidate bandwidth produced a usable prediction", details={"candidates": diagnostics})
    means = np.array([float(e[common].mean()) for e in scores])
    best = float(means.min())
    tied = [h for h, m in zip(hs, means) if m <= best * (1.0 + 1e-9)]
    choice = max(tied)
    logger.info("bandwidth_by_prediction: %d candidates, %d prediction times, selected h=%.6g", len(hs), int(common.sum()), choice)
    return choice
