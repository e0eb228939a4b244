"""
State-price density extraction.

f*(K) = exp(rT) d^2 C / dK^2 from a call-price curve, either by a kernel
weighted local-quadratic fit (the curvature coefficient is read off) or by
central second differences on an exact equispaced grid. The semiparametric
route smooths implied volatilities over (F/K, T) first and rebuilds the
call curve from Black-Scholes at the target spot and maturity.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import numpy.typing as npt
from scipy import integrate, stats

from apps.core.conf import grid_points
from apps.core.exceptions import ValidationError
from apps.derivatives.positions import QuoteSet
from apps.derivatives.pricing import bs_price, implied_vols
from apps.smoothing.bandwidth import silverman_bandwidth
from apps.smoothing.curves import CurveEstimate, PointStatus
from apps.smoothing.kernels import KernelShape, KernelSpec
from apps.smoothing.services import effective_mass, local_linear

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]

MIN_STRIKES = 5
MIN_QUOTES = 50
DEFAULT_SPACINGS = 5.0
MASS_WARNING = 0.5
EXCLUSION_WARNING = 0.2
EQUISPACED_TOLERANCE = 1e-6
MIN_SPD_GRID = 401
# Effective sample size of a three-point second difference.
CENTRAL_DIFFERENCE_MASS = 3.0


"""
GOAL: Extracted state-price density with mass bookkeeping.

PARAMETERS:
  curve: CurveEstimate - Density over strikes (after clipping and optional renormalization)
  mass: float - Integral of the reported density
  pre_clip_mass: float - Integral before negative values were clipped
  clipped_points: int - Number of strikes clipped to zero
  renormalized: bool - True when the density was rescaled to unit mass
"""
@dataclass(frozen=True)
class SPDEstimate:
    curve: CurveEstimate
    mass: float
    pre_clip_mass: float
    clipped_points: int
    renormalized: bool

    @property
    def strikes(self) -> FloatArray:
        return self.curve.grid

    @property
    def density(self) -> FloatArray:
        return self.curve.value


def lognormal_spd(
    S: float, T: float, r: float, sigma: float, delta_yield: float, K: npt.ArrayLike
) -> FloatArray | float:
    """Risk-neutral GBM density of X_T: log-mean log S + (r - delta - sigma^2/2) T, log-variance sigma^2 T."""
    k = np.asarray(K, dtype=np.float64)
    scale = S * math.exp((r - delta_yield - 0.5 * sigma * sigma) * T)
    out = stats.lognorm.pdf(k, s=sigma * math.sqrt(T), scale=scale)
    return float(out) if out.ndim == 0 else out


def _strike_curve(strikes: npt.ArrayLike, calls: npt.ArrayLike) -> tuple[FloatArray, FloatArray]:
    k = np.asarray(strikes, dtype=np.float64).reshape(-1)
    c = np.asarray(calls, dtype=np.float64).reshape(-1)
    if k.size != c.size:
        raise ValidationError("strikes and call prices must have equal lengths", details={"strikes": k.size, "calls": c.size})
    if k.size < MIN_STRIKES:
        raise ValidationError(
            f"state-price extraction needs at least {MIN_STRIKES} strikes", details={"strikes": int(k.size)}
        )
    if not (np.all(np.isfinite(k)) and np.all(np.isfinite(c))):
        raise ValidationError("strikes and call prices must be finite")
    if np.any(np.diff(k) <= 0):
        raise ValidationError("strikes must be strictly ascending")
    return k, c


def _central_differences(k: FloatArray, c: FloatArray) -> tuple[FloatArray, FloatArray, FloatArray]:
    spacing = np.diff(k)
    step = float(np.mean(spacing))
    if np.max(np.abs(spacing - step)) > EQUISPACED_TOLERANCE * step:
        raise ValidationError("exact_grid needs equispaced strikes", details={"spacing": [float(spacing.min()), float(spacing.max())]})
    curvature = (c[2:] - 2.0 * c[1:-1] + c[:-2]) / (step * step)
    return k[1:-1], curvature, np.zeros_like(curvature)


"""
GOAL: Second strike-derivative of C(K) by local-quadratic weighted least squares.

PARAMETERS:
  k, c: arrays - Strikes and call prices
  h: float - Gaussian kernel bandwidth in strike units - > 0
  grid: array - Evaluation strikes

RETURNS:
  tuple - (curvature, sandwich stderr, Kish effective mass) per grid point

GUARANTEES:
  - Quadratic curves are reproduced exactly; affine segments give zero curvature
  - Singular local designs yield NaN
"""
def _local_quadratic_curvature(
    k: FloatArray, c: FloatArray, h: float, grid: FloatArray
) -> tuple[FloatArray, FloatArray, FloatArray]:
    kernel = KernelSpec(KernelShape.GAUSSIAN, h)
    d = (k[None, :] - grid[:, None]) / h
    w = kernel.weights(d * h)
    design = np.stack([np.ones_like(d), d, d * d], axis=-1)
    weighted = design * w[..., None]
    normal = np.einsum("gna,gnb->gab", weighted, design)
    rhs = np.einsum("gna,n->ga", weighted, c)
    inverse = np.linalg.pinv(normal)
    beta = np.einsum("gab,gb->ga", inverse, rhs)
    # row of the linear smoother giving beta_2
    rows = np.einsum("gb,gnb->gn", inverse[:, 2, :], weighted)
    fitted = np.einsum("gna,ga->gn", design, beta)
    residual = c[None, :] - fitted
    curvature = 2.0 * beta[:, 2] / (h * h)
    stderr = 2.0 * np.sqrt(np.einsum("gn,gn->g", rows * rows, residual * residual)) / (h * h)
    singular = np.linalg.cond(normal) > 1e12
    curvature[singular] = np.nan
    stderr[singular] = np.nan
    return curvature, stderr, effective_mass(w)


def _integral(grid: FloatArray, values: FloatArray) -> float:
    keep = np.isfinite(values)
    if keep.sum() < 2:
        return 0.0
    return float(integrate.trapezoid(values[keep], grid[keep]))


"""
GOAL: State-price density f*(K) = exp(rT) d^2 C / dK^2 from a call-price curve.

PARAMETERS:
  strikes: array - Strikes, strictly ascending - >= 5 values
  calls: array - Call prices at those strikes; noise allowed
  r: float - Risk-free rate
  T: float - Maturity in years - > 0
  h: Optional[float] - Local-quadratic bandwidth (default 5 x median strike spacing)
  exact_grid: bool - Central second differences on equispaced, noise-free strikes
  grid: Optional[array] - Evaluation strikes for the local-quadratic fit (default: the strikes)
  renormalize: bool - Rescale the clipped density to unit mass

RETURNS:
  SPDEstimate - density curve with clipped points flagged, mass before and after clipping

RAISES:
  ValidationError: too few strikes, unsorted strikes, non-equispaced strikes with exact_grid

GUARANTEES:
  - Reported density is >= 0; negative estimates are set to 0 with status clipped
  - pre_clip_mass is always reported; a mass below 0.5 logs a warning
"""
def spd_from_calls(
    strikes: npt.ArrayLike,
    calls: npt.ArrayLike,
    r: float,
    T: float,
    h: Optional[float] = None,
    exact_grid: bool = False,
    grid: Optional[npt.ArrayLike] = None,
    renormalize: bool = False,
) -> SPDEstimate:
    if not (math.isfinite(T) and T > 0):
        raise ValidationError("maturity must be > 0", details={"T": T})
    k, c = _strike_curve(strikes, calls)
    if exact_grid:
        points, curvature, stderr = _central_differences(k, c)
        mass = np.full(points.size, CENTRAL_DIFFERENCE_MASS)
        method = "central_differences"
        bandwidth = float(np.mean(np.diff(k)))
    else:
        bandwidth = DEFAULT_SPACINGS * float(np.median(np.diff(k))) if h is None else float(h)
        points = k if grid is None else np.asarray(grid, dtype=np.float64).reshape(-1)
        if points.size < 2 or np.any(np.diff(points) <= 0):
            raise ValidationError("SPD grid must be strictly ascending with at least two points")
        curvature, stderr, mass = _local_quadratic_curvature(k, c, bandwidth, points)
        method = "local_quadratic"

    growth = math.exp(r * T)
    density = growth * curvature
    stderr = growth * stderr
    status = np.where(np.isfinite(density), PointStatus.OK.value, PointStatus.DEGENERATE.value).astype(object)
    raw = CurveEstimate(
        points,
        density,
        stderr,
        mass,
        status,
        diagnostics={"estimator": "spd", "method": method, "bandwidth": bandwidth, "r": r, "T": T},
    )
    pre_clip_mass = _integral(points, density)
    curve = raw.clipped_at_zero()
    clipped = int(curve.diagnostics.get("clipped_points", 0))
    total = _integral(points, curve.value)

    renormalized = False
    if renormalize and total > 0:
        curve = curve.with_values(curve.value / total, curve.stderr / total, renormalized_from=total)
        total = 1.0
        renormalized = True
    if total < MASS_WARNING:
        logger.warning("SPD mass %.3f after clipping %d points: call curve is far from convex", total, clipped)
    elif clipped:
        logger.info("SPD: clipped %d negative density values; pre-clip mass %.4f", clipped, pre_clip_mass)
    return SPDEstimate(curve, total, pre_clip_mass, clipped, renormalized)


"""
GOAL: Implied-volatility surface sigma(F/K, T) by kernel-weighted local-linear smoothing.

PARAMETERS:
  moneyness: array - F / K per quote
  maturity: array - T per quote
  vols: array - Implied volatilities (finite)
  h_moneyness: float - Gaussian bandwidth in moneyness - > 0
  h_maturity: Optional[float] - Gaussian bandwidth in maturity; None for a single maturity

GUARANTEES:
  - Inputs enter only through (F/K, T), so the surface is invariant to rescaling S and K together
  - A constant vol is reproduced exactly
"""
@dataclass(frozen=True, eq=False)
class VolSurface:
    moneyness: FloatArray
    maturity: FloatArray
    vols: FloatArray
    h_moneyness: float
    h_maturity: Optional[float]

    @property
    def single_maturity(self) -> bool:
        return self.h_maturity is None

    def __call__(self, moneyness: npt.ArrayLike, maturity: float) -> FloatArray:
        m = np.asarray(moneyness, dtype=np.float64).reshape(-1)
        if self.single_maturity:
            nodes, inverse = np.unique(m, return_inverse=True)
            fit = local_linear(self.moneyness, self.vols, KernelSpec(KernelShape.GAUSSIAN, self.h_moneyness), nodes)
            return fit.value[inverse]
        return self._two_dimensional(m, float(maturity))

    def _two_dimensional(self, m: FloatArray, t0: float) -> FloatArray:
        assert self.h_maturity is not None
        dm = (self.moneyness[None, :] - m[:, None]) / self.h_moneyness
        dt = np.broadcast_to((self.maturity - t0)[None, :] / self.h_maturity, dm.shape)
        w = stats.norm.pdf(dm) * stats.norm.pdf(dt)
        design = np.stack([np.ones_like(dm), dm, dt], axis=-1)
        weighted = design * w[..., None]
        normal = np.einsum("gna,gnb->gab", weighted, design)
        rhs = np.einsum("gna,n->ga", weighted, self.vols)
        beta = np.einsum("gab,gb->ga", np.linalg.pinv(normal), rhs)
        level = beta[:, 0]
        level[np.linalg.cond(normal) > 1e12] = np.nan
        return level


def fit_vol_surface(
    quotes: QuoteSet,
    h_moneyness: Optional[float] = None,
    h_maturity: Optional[float] = None,
) -> tuple[VolSurface, int]:
    """Implied vols of every quote smoothed over (F/K, T); returns the surface and the excluded count."""
    vols, failed = implied_vols(quotes)
    keep = np.isfinite(vols)
    if failed / max(len(quotes), 1) > EXCLUSION_WARNING:
        logger.warning("%d of %d quotes excluded: implied volatility unavailable", failed, len(quotes))
    if keep.sum() < MIN_STRIKES:
        raise ValidationError("too few quotes with an implied volatility", details={"usable": int(keep.sum())})
    moneyness = quotes.forward[keep] / quotes.strike[keep]
    maturity = quotes.maturity[keep]
    h_m = silverman_bandwidth(moneyness) if h_moneyness is None else float(h_moneyness)
    single = bool(np.ptp(maturity) == 0)
    h_t = None if single else (silverman_bandwidth(maturity) if h_maturity is None else float(h_maturity))
    return VolSurface(moneyness, maturity, vols[keep], h_m, h_t), failed


"""
GOAL: Semiparametric state-price density from a panel of call quotes.

PARAMETERS:
  quotes: QuoteSet - Observed calls spanning moneyness and maturity - >= 50 quotes
  target_spot: float - Spot S at which the density is wanted - > 0
  target_maturity: float - Horizon T - > 0
  r: float - Risk-free rate
  delta_yield: float - Dividend yield
  h_moneyness, h_maturity: Optional[float] - Smoothing bandwidths (Silverman defaults)
  grid: Optional[array] - Equispaced strike grid (default spans the quoted moneyness range)
  renormalize: bool - Passed to spd_from_calls

RETURNS:
  SPDEstimate - diagnostics carry the excluded quote count and bandwidths

RAISES:
  ValidationError: fewer than 50 quotes or invalid targets
"""
def spd_semiparametric(
    quotes: QuoteSet,
    target_spot: float,
    target_maturity: float,
    r: float,
    delta_yield: float = 0.0,
    h_moneyness: Optional[float] = None,
    h_maturity: Optional[float] = None,
    grid: Optional[npt.ArrayLike] = None,
    renormalize: bool = False,
) -> SPDEstimate:
    if len(quotes) < MIN_QUOTES:
        raise ValidationError(
            f"semiparametric SPD needs at least {MIN_QUOTES} quotes", details={"quotes": len(quotes)}
        )
    if not (target_spot > 0 and target_maturity > 0):
        raise ValidationError("target spot and maturity must be > 0")
    surface, excluded = fit_vol_surface(quotes, h_moneyness, h_maturity)
    forward = target_spot * math.exp((r - delta_yield) * target_maturity)
    if grid is None:
        n = max(MIN_SPD_GRID, 4 * grid_points() + 1)
        strikes = np.linspace(forward / surface.moneyness.max(), forward / surface.moneyness.min(), n)
    else:
        strikes = np.asarray(grid, dtype=np.float64).reshape(-1)
    sigma = surface(forward / strikes, target_maturity)
    usable = np.isfinite(sigma) & (sigma > 0)
    if not usable.all():
        raise ValidationError("vol surface undefined on part of the strike grid", details={"undefined": int((~usable).sum())})
    calls = np.asarray(bs_price(target_spot, strikes, target_maturity, r, sigma, delta_yield))
    estimate = spd_from_calls(strikes, calls, r, target_maturity, exact_grid=True, renormalize=renormalize)
    curve = estimate.curve.with_values(
        estimate.curve.value,
        method="semiparametric",
        excluded_quotes=excluded,
        h_moneyness=surface.h_moneyness,
        h_maturity=surface.h_maturity,
    )
    return SPDEstimate(curve, estimate.mass, estimate.pre_clip_mass, estimate.clipped_points, estimate.renormalized)
