"""
Checked model evaluation and closed-form laws.

Coefficients, invariant densities and transition laws for the model
catalogue. Everything here is pure and safe to call from any thread.
"""

from __future__ import annotations

import functools
import logging
import math
from typing import Callable, Optional

import numpy as np
import numpy.typing as npt
from scipy import integrate, stats

from apps.core.exceptions import DomainError, NumericalError, UnsupportedModelError, ValidationError
from apps.sde.catalog import Family, FloatArray, ModelSpec

logger = logging.getLogger(__name__)

QUAD_LIMIT = 200
SUPPORT_EXPANSION = 0.2


def _array(x: npt.ArrayLike) -> FloatArray:
    return np.asarray(x, dtype=np.float64)


def _scalar_or_array(value: FloatArray, *inputs: npt.ArrayLike) -> FloatArray | float:
    return float(value) if all(np.ndim(item) == 0 for item in inputs) else value


def _check_domain(model: ModelSpec, x: FloatArray, what: str = "x") -> None:
    if model.positive_domain and np.any(x <= 0):
        raise DomainError(
            f"{what} must be > 0 for {model.family.value} models",
            details={"family": model.family.value, "min": float(np.min(x))},
        )
    lower, upper = model.support
    if model.family is Family.GENERIC and (np.any(x < lower) or np.any(x > upper)):
        raise DomainError(
            f"{what} outside the model support [{lower}, {upper}]",
            details={"support": [lower, upper]},
        )


"""
GOAL: Evaluate (mu(t, x), sigma(t, x)) with domain checks.

PARAMETERS:
  model: ModelSpec - Any family
  t: float | array - Time; ignored by time-homogeneous families
  x: float | array - State - Inside the model's state domain

RETURNS:
  tuple - (drift, diffusion), scalars for scalar x, arrays otherwise

RAISES:
  DomainError: x <= 0 for positive-domain families, x outside a generic support
  NumericalError: Generic callables returned non-finite values

GUARANTEES:
  - diffusion >= 0
  - CKLS with gamma = 0.5 matches CIR exactly
"""
def evaluate_coefficients(
    model: ModelSpec, t: npt.ArrayLike, x: npt.ArrayLike
) -> tuple[FloatArray | float, FloatArray | float]:
    """Checked front for ModelSpec.drift / ModelSpec.diffusion."""
    xs = _array(x)
    _check_domain(model, xs)
    drift = model.drift(t, xs)
    diffusion = model.diffusion(t, xs)
    if not (np.all(np.isfinite(drift)) and np.all(np.isfinite(diffusion))):
        raise NumericalError("model coefficients are not finite", details={"family": model.family.value})
    if np.any(diffusion < 0):
        raise ValidationError("diffusion function must be >= 0", details={"family": model.family.value})
    return _scalar_or_array(drift, x), _scalar_or_array(diffusion, x)


# ---------------------------------------------------------------------------
# Invariant densities
# ---------------------------------------------------------------------------

def _require_stationary(model: ModelSpec) -> None:
    if not model.is_stationary:
        raise UnsupportedModelError(
            f"{model.family.value} model has no invariant density",
            details={"family": model.family.value, "risk_neutral": model.risk_free_rate is not None},
        )


def support_from_data(values: npt.ArrayLike, positive: bool = False) -> tuple[float, float]:
    """Observed [min, max] widened by 20% of the range on each side; floored at 0 for positive processes."""
    data = _array(values)
    lo, hi = float(np.min(data)), float(np.max(data))
    pad = SUPPORT_EXPANSION * max(hi - lo, 1e-12 * max(1.0, abs(hi)))
    lower = lo - pad
    if positive:
        lower = max(lower, 0.0)
    return lower, hi + pad


def _ckls_support(model: ModelSpec) -> tuple[float, float]:
    p = model.params
    sd = p["sigma"] * p["alpha"] ** p["gamma"] / math.sqrt(2.0 * p["kappa"])
    return 0.0, p["alpha"] + 30.0 * sd


def quadrature_support(model: ModelSpec, support: Optional[tuple[float, float]]) -> tuple[float, float]:
    if support is not None:
        lower, upper = support
    elif model.family is Family.CKLS:
        lower, upper = _ckls_support(model)
    else:
        lower, upper = model.support
    if not (math.isfinite(lower) and math.isfinite(upper) and lower < upper):
        raise ValidationError(
            "invariant density quadrature needs a finite support; pass one or use support_from_data",
            details={"support": [lower, upper]},
        )
    return float(lower), float(upper)


def _quad(fn: Callable[[float], float], lower: float, upper: float, points: Optional[list[float]] = None) -> tuple[float, float]:
    inner_points = [p for p in (points or []) if lower < p < upper] or None
    result = integrate.quad(fn, lower, upper, limit=QUAD_LIMIT, points=inner_points, full_output=1)
    if len(result) > 3:
        raise NumericalError(
            "quadrature did not converge",
            details={"interval": [lower, upper], "message": str(result[3]), "abserr": float(result[1])},
        )
    return float(result[0]), float(result[1])


def _reference_point(model: ModelSpec, lower: float, upper: float) -> float:
    if model.family is Family.CKLS:
        return model.params["alpha"]
    return 0.5 * (lower + upper)


def _ckls_antiderivative(model: ModelSpec, u: float) -> float:
    """Antiderivative of 2 kappa (alpha - u) / (sigma^2 u^(2 gamma))."""
    p = model.params
    g = p["gamma"]
    scale = 2.0 * p["kappa"] / p["sigma"] ** 2
    if math.isclose(g, 0.5):
        first = p["alpha"] * math.log(u)
    else:
        first = p["alpha"] * u ** (1.0 - 2.0 * g) / (1.0 - 2.0 * g)
    if math.isclose(g, 1.0):
        second = math.log(u)
    else:
        second = u ** (2.0 - 2.0 * g) / (2.0 - 2.0 * g)
    return scale * (first - second)


def _scale_exponent(model: ModelSpec, x: float, reference: float) -> float:
    """int_reference^x 2 mu(u) / sigma^2(u) du."""
    if x == reference:
        return 0.0
    if model.family is Family.CKLS:
        return _ckls_antiderivative(model, x) - _ckls_antiderivative(model, reference)

    def integrand(u: float) -> float:
        s = float(model.diffusion(0.0, u))
        return 2.0 * float(model.drift(0.0, u)) / (s * s)

    value, _ = _quad(integrand, reference, x) if x > reference else _quad(integrand, x, reference)
    return value if x > reference else -value


def _unnormalized(model: ModelSpec, x: float, reference: float) -> float:
    if model.positive_domain and x <= 0:
        return 0.0
    s = float(model.diffusion(0.0, x))
    if s <= 0:
        return 0.0
    exponent = _scale_exponent(model, x, reference)
    if exponent > 700.0:
        raise NumericalError("invariant density overflows on the support", details={"x": x, "exponent": exponent})
    return math.exp(exponent) / (s * s)


@functools.lru_cache(maxsize=64)
def _normalizer(model: ModelSpec, lower: float, upper: float) -> tuple[float, float, float]:
    reference = _reference_point(model, lower, upper)
    c_inv, abserr = _quad(lambda u: _unnormalized(model, u, reference), lower, upper, points=[reference])
    if not (math.isfinite(c_inv) and c_inv > 0):
        raise NumericalError(
            "normalizing integral is not positive and finite",
            details={"integral": c_inv, "support": [lower, upper]},
        )
    logger.debug("invariant density of %r normalized on [%g, %g], abserr=%.2e", model, lower, upper, abserr)
    return 1.0 / c_inv, abserr / c_inv**2, reference


"""
GOAL: Normalizing constant C0 of the invariant density of a CKLS or generic model.

PARAMETERS:
  model: ModelSpec - CKLS or Generic - Stationary
  support: Optional[(lower, upper)] - Quadrature domain; defaults per family

RETURNS:
  tuple[float, float] - (C0, absolute error estimate of C0)

RAISES:
  UnsupportedModelError: non-stationary model
  NumericalError: quadrature failed to converge
"""
def normalizing_constant(model: ModelSpec, support: Optional[tuple[float, float]] = None) -> tuple[float, float]:
    _require_stationary(model)
    lower, upper = quadrature_support(model, support)
    c0, err, _ = _normalizer(model, lower, upper)
    return c0, err


"""
GOAL: Invariant (stationary) density of a time-homogeneous mean-reverting or generic model.

PARAMETERS:
  model: ModelSpec - Vasicek, CIR, CKLS or Generic
  x: float | array - Evaluation points
  support: Optional[(lower, upper)] - Quadrature domain for CKLS/Generic

RETURNS:
  float | array - Density values >= 0

RAISES:
  UnsupportedModelError: GBM, time-varying or risk-neutral models
  NumericalError: quadrature non-convergence, details carry the interval and message

GUARANTEES:
  - Vasicek: Normal(alpha, sigma^2 / 2 kappa); CIR: Gamma(q + 1, sigma^2 / 2 kappa)
  - Positive-domain families return 0 at x <= 0
  - CKLS/Generic use C0 * sigma(x)^-2 * exp(int 2 mu / sigma^2)
"""
def invariant_density(
    model: ModelSpec, x: npt.ArrayLike, support: Optional[tuple[float, float]] = None
) -> FloatArray | float:
    _require_stationary(model)
    xs = _array(x)
    p = model.params
    if model.family is Family.VASICEK:
        sd = p["sigma"] / math.sqrt(2.0 * p["kappa"])
        return _scalar_or_array(stats.norm.pdf(xs, loc=p["alpha"], scale=sd), x)
    if model.family is Family.CIR:
        scale = p["sigma"] ** 2 / (2.0 * p["kappa"])
        density = np.where(xs > 0, stats.gamma.pdf(np.where(xs > 0, xs, 1.0), a=model.feller_index + 1.0, scale=scale), 0.0)
        return _scalar_or_array(density, x)

    lower, upper = quadrature_support(model, support)
    c0, _, reference = _normalizer(model, lower, upper)
    flat = xs.reshape(-1)
    out = np.zeros_like(flat)
    for i, point in enumerate(flat):
        if point <= lower and model.positive_domain:
            continue
        if point < lower or point > upper:
            continue
        out[i] = c0 * _unnormalized(model, float(point), reference)
    return _scalar_or_array(out.reshape(xs.shape), x)


def stationary_moments(model: ModelSpec) -> tuple[float, float]:
    """(mean, variance) of the invariant law; closed form for Vasicek and CIR."""
    p = model.params
    if model.risk_free_rate is None and model.family is Family.VASICEK:
        return p["alpha"], p["sigma"] ** 2 / (2.0 * p["kappa"])
    if model.risk_free_rate is None and model.family is Family.CIR:
        return p["alpha"], p["alpha"] * p["sigma"] ** 2 / (2.0 * p["kappa"])
    raise UnsupportedModelError(
        f"closed-form stationary moments are not available for {model.family.value}",
        details={"family": model.family.value},
    )


# ---------------------------------------------------------------------------
# Transition laws
# ---------------------------------------------------------------------------

def _require_transition(model: ModelSpec, delta: float) -> None:
    if not model.has_closed_form_transition:
        raise UnsupportedModelError(
            f"no closed-form transition law for {model.family.value}; use simulation or nonparametric estimation",
            details={"family": model.family.value},
        )
    if not delta > 0:
        raise ValidationError("delta must be > 0", details={"delta": delta})


def _gbm_drift(model: ModelSpec) -> float:
    return model.risk_free_rate if model.risk_free_rate is not None else model.params["mu"]


def cir_constants(model: ModelSpec, delta: float, x0: npt.ArrayLike) -> tuple[float, float, FloatArray]:
    """(c, degrees of freedom 2q+2, noncentrality 2u) with 2c X_delta ~ ncx2."""
    p = model.params
    rho = math.exp(-p["kappa"] * delta)
    c = 2.0 * p["kappa"] / (p["sigma"] ** 2 * (1.0 - rho))
    u = c * _array(x0) * rho
    return c, 2.0 * model.feller_index + 2.0, 2.0 * u


def _vasicek_law(model: ModelSpec, delta: float, x0: FloatArray) -> tuple[FloatArray, float]:
    p = model.params
    rho = math.exp(-p["kappa"] * delta)
    mean = p["alpha"] + (x0 - p["alpha"]) * rho
    sd = p["sigma"] * math.sqrt((1.0 - rho * rho) / (2.0 * p["kappa"]))
    return mean, sd


def _gbm_law(model: ModelSpec, delta: float, x0: FloatArray) -> tuple[float, FloatArray]:
    s = model.params["sigma"] * math.sqrt(delta)
    scale = x0 * math.exp((_gbm_drift(model) - 0.5 * model.params["sigma"] ** 2) * delta)
    return s, scale


"""
GOAL: Closed-form transition density p_delta(y | x0).

PARAMETERS:
  model: ModelSpec - GBM, Vasicek or CIR
  delta: float - Horizon - > 0
  x0: float | array - Current state - Broadcast against y
  y: float | array - Future state

RETURNS:
  float | array - Density values >= 0

RAISES:
  UnsupportedModelError: other families (callers fall back to simulation or smoothing)
  DomainError: x0 <= 0 for GBM/CIR

GUARANTEES:
  - CIR: 2c X_delta ~ noncentral chi2(2q + 2, 2u), c = 2 kappa / (sigma^2 (1 - e^-kappa delta)),
    u = c x0 e^-kappa delta; density 0 at y <= 0
"""
def transition_density(model: ModelSpec, delta: float, x0: npt.ArrayLike, y: npt.ArrayLike) -> FloatArray | float:
    _require_transition(model, delta)
    x0s, ys = _array(x0), _array(y)
    _check_domain(model, x0s, what="x0")
    if model.family is Family.VASICEK:
        mean, sd = _vasicek_law(model, delta, x0s)
        out = stats.norm.pdf(ys, loc=mean, scale=sd)
    elif model.family is Family.GBM:
        s, scale = _gbm_law(model, delta, x0s)
        positive = ys > 0
        out = np.where(positive, stats.lognorm.pdf(np.where(positive, ys, 1.0), s=s, scale=scale), 0.0)
    else:
        c, df, nc = cir_constants(model, delta, x0s)
        positive = ys > 0
        out = np.where(positive, 2.0 * c * stats.ncx2.pdf(2.0 * c * np.where(positive, ys, 1.0), df, nc), 0.0)
    return _scalar_or_array(np.asarray(out, dtype=np.float64), x0, y)


def transition_cdf(model: ModelSpec, delta: float, x0: npt.ArrayLike, y: npt.ArrayLike) -> FloatArray | float:
    """Conditional CDF P(X_delta <= y | X_0 = x0) for GBM, Vasicek and CIR."""
    _require_transition(model, delta)
    x0s, ys = _array(x0), _array(y)
    _check_domain(model, x0s, what="x0")
    if model.family is Family.VASICEK:
        mean, sd = _vasicek_law(model, delta, x0s)
        out = stats.norm.cdf(ys, loc=mean, scale=sd)
    elif model.family is Family.GBM:
        s, scale = _gbm_law(model, delta, x0s)
        out = np.where(ys > 0, stats.lognorm.cdf(np.maximum(ys, 0.0), s=s, scale=scale), 0.0)
    else:
        c, df, nc = cir_constants(model, delta, x0s)
        out = np.where(ys > 0, stats.ncx2.cdf(2.0 * c * np.maximum(ys, 0.0), df, nc), 0.0)
    return _scalar_or_array(np.asarray(out, dtype=np.float64), x0, y)


def transition_moments(model: ModelSpec, delta: float, x0: npt.ArrayLike) -> tuple[FloatArray | float, FloatArray | float]:
    """Conditional (mean, variance) of X_delta given X_0 = x0."""
    _require_transition(model, delta)
    x0s = _array(x0)
    _check_domain(model, x0s, what="x0")
    p = model.params
    if model.family is Family.GBM:
        growth = math.exp(_gbm_drift(model) * delta)
        mean = x0s * growth
        variance = x0s**2 * growth**2 * math.expm1(p["sigma"] ** 2 * delta)
    elif model.family is Family.VASICEK:
        mean, sd = _vasicek_law(model, delta, x0s)
        variance = np.full_like(x0s, sd * sd)
    else:
        rho = math.exp(-p["kappa"] * delta)
        mean = p["alpha"] + (x0s - p["alpha"]) * rho
        s2k = p["sigma"] ** 2 / p["kappa"]
        variance = x0s * s2k * (rho - rho * rho) + p["alpha"] * s2k / 2.0 * (1.0 - rho) ** 2
    return _scalar_or_array(mean, x0), _scalar_or_array(np.asarray(variance, dtype=np.float64), x0)
