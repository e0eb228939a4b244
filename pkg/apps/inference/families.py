"""
Parameter vectors, bounds and discretized moments of the estimable families.
"""

from __future__ import annotations

import math
from typing import Mapping, Sequence

import numpy as np
import numpy.typing as npt
from scipy import stats

from apps.core.exceptions import DomainError, UnsupportedModelError
from apps.sde.catalog import PARAMETER_NAMES, Family, ModelSpec
from apps.sde.paths import SamplePath

FloatArray = npt.NDArray[np.float64]

ESTIMABLE = frozenset({Family.GBM, Family.VASICEK, Family.CIR, Family.CKLS})

_TINY = 1e-10
_BOUNDS: Mapping[str, tuple[float | None, float | None]] = {
    "mu": (None, None),
    "kappa": (_TINY, None),
    "sigma": (_TINY, None),
    "gamma": (0.0, 3.0),
}


def estimable_family(family: Family | str) -> Family:
    family = Family(family)
    if family not in ESTIMABLE:
        raise UnsupportedModelError(
            f"parametric estimation is not available for {family.value}",
            details={"family": family.value, "supported": sorted(f.value for f in ESTIMABLE)},
        )
    return family


def parameter_names(family: Family) -> tuple[str, ...]:
    return PARAMETER_NAMES[family]


def bounds(family: Family) -> list[tuple[float | None, float | None]]:
    """Optimizer box per parameter; alpha is positive only for positive-domain families."""
    out = []
    for name in parameter_names(family):
        if name == "alpha":
            out.append((_TINY, None) if family in {Family.CIR, Family.CKLS} else (None, None))
        else:
            out.append(_BOUNDS[name])
    return out


def as_params(family: Family, theta: Sequence[float]) -> dict[str, float]:
    return {name: float(value) for name, value in zip(parameter_names(family), theta)}


def model_from_vector(family: Family, theta: Sequence[float]) -> ModelSpec:
    return ModelSpec.from_parameters(family, as_params(family, theta))


def elasticity(family: Family, params: Mapping[str, float]) -> float:
    """Exponent of x in sigma(x): 0 Vasicek, 1/2 CIR, gamma CKLS, 1 GBM."""
    return {
        Family.GBM: 1.0,
        Family.VASICEK: 0.0,
        Family.CIR: 0.5,
    }.get(family, params.get("gamma", 0.0))


def coefficients(family: Family, params: Mapping[str, float], x: FloatArray) -> tuple[FloatArray, FloatArray]:
    """(mu(x), sigma^2(x)) for unchecked parameter values."""
    if family is Family.GBM:
        drift = params["mu"] * x
    else:
        drift = params["kappa"] * (params["alpha"] - x)
    power = elasticity(family, params)
    base = np.abs(x) if power else np.ones_like(x)
    return drift, params["sigma"] ** 2 * np.power(base, 2.0 * power)


def euler_moments(
    family: Family, params: Mapping[str, float], x: FloatArray, delta: float
) -> tuple[FloatArray, FloatArray]:
    """Conditional mean and variance of the Euler step from x."""
    drift, variance = coefficients(family, params, x)
    return x + drift * delta, variance * delta


def require_domain(family: Family, path: SamplePath) -> None:
    if family in {Family.GBM, Family.CIR, Family.CKLS} and not path.is_positive:
        raise DomainError(
            f"{family.value} fits need strictly positive observations",
            details={"family": family.value, "minimum": float(np.min(path.values))},
        )


def scale_of(theta: FloatArray) -> FloatArray:
    """Per-coordinate scale for optimizer conditioning."""
    scale = np.abs(np.asarray(theta, dtype=np.float64))
    return np.where(scale > 0, scale, 1.0)


def is_finite_vector(theta: Sequence[float]) -> bool:
    return all(math.isfinite(v) for v in theta)


def exact_log_density(
    family: Family, params: Mapping[str, float], delta: float, x: FloatArray, y: FloatArray
) -> FloatArray:
    """log p_delta(y | x) for GBM, Vasicek and CIR; -inf outside the support."""
    sigma = params["sigma"]
    if family is Family.VASICEK:
        rho = math.exp(-params["kappa"] * delta)
        sd = sigma * math.sqrt((1.0 - rho * rho) / (2.0 * params["kappa"]))
        return stats.norm.logpdf(y, loc=params["alpha"] + (x - params["alpha"]) * rho, scale=sd)
    if family is Family.GBM:
        s = sigma * math.sqrt(delta)
        loc = np.log(x) + (params["mu"] - 0.5 * sigma * sigma) * delta
        with np.errstate(divide="ignore", invalid="ignore"):
            out = stats.norm.logpdf(np.log(np.where(y > 0, y, 1.0)), loc=loc, scale=s) - np.log(np.where(y > 0, y, 1.0))
        return np.where(y > 0, out, -np.inf)
    if family is Family.CIR:
        kappa = params["kappa"]
        rho = math.exp(-kappa * delta)
        c = 2.0 * kappa / (sigma * sigma * (1.0 - rho))
        df = 4.0 * kappa * params["alpha"] / (sigma * sigma)
        positive = y > 0
        out = math.log(2.0 * c) + stats.ncx2.logpdf(2.0 * c * np.where(positive, y, 1.0), df, 2.0 * c * x * rho)
        return np.where(positive, out, -np.inf)
    raise UnsupportedModelError(f"no closed-form transition law for {family.value}", details={"family": family.value})
