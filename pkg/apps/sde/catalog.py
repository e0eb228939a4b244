"""
Model catalogue: parametric diffusion families and their coefficients.

All coefficient methods are vectorized over numpy arrays of states and never
validate the domain; `apps.sde.services.evaluate_coefficients` is the checked
entry point.
"""

from __future__ import annotations

import dataclasses
import enum
import logging
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Callable, Mapping, Optional

import numpy as np
import numpy.typing as npt

from apps.core.exceptions import ValidationError

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]
StateFn = Callable[[FloatArray], FloatArray]
TimeFn = Callable[[FloatArray], FloatArray]


class Family(str, enum.Enum):
    GBM = "gbm"
    VASICEK = "vasicek"
    CIR = "cir"
    CKLS = "ckls"
    GENERIC = "generic"
    TIME_VARYING_CKLS = "time_varying_ckls"
    SEMIPARAMETRIC_CKLS = "semiparametric_ckls"


PARAMETER_NAMES: Mapping[Family, tuple[str, ...]] = MappingProxyType(
    {
        Family.GBM: ("mu", "sigma"),
        Family.VASICEK: ("kappa", "alpha", "sigma"),
        Family.CIR: ("kappa", "alpha", "sigma"),
        Family.CKLS: ("kappa", "alpha", "sigma", "gamma"),
        Family.GENERIC: (),
        Family.TIME_VARYING_CKLS: (),
        Family.SEMIPARAMETRIC_CKLS: ("alpha1", "beta"),
    }
)

MEAN_REVERTING = frozenset({Family.VASICEK, Family.CIR, Family.CKLS})
POSITIVE_DOMAIN = frozenset(
    {Family.GBM, Family.CIR, Family.CKLS, Family.TIME_VARYING_CKLS, Family.SEMIPARAMETRIC_CKLS}
)
CLOSED_FORM_TRANSITION = frozenset({Family.GBM, Family.VASICEK, Family.CIR})

_FD_STEP = 1e-6


def _as_array(x: npt.ArrayLike) -> FloatArray:
    return np.asarray(x, dtype=np.float64)


def _power(x: FloatArray, exponent: float) -> FloatArray:
    return np.sqrt(x) if exponent == 0.5 else np.power(x, exponent)


def _central_difference(fn: StateFn, x: FloatArray) -> FloatArray:
    step = _FD_STEP * np.maximum(1.0, np.abs(x))
    return (fn(x + step) - fn(x - step)) / (2.0 * step)


"""
GOAL: Immutable description of a one-dimensional diffusion dX = mu(t, X) dt + sigma(t, X) dW.

PARAMETERS:
  family: Family - Named family or GENERIC
  params: Mapping[str, float] - Scalar parameters named by PARAMETER_NAMES
  drift_fn / diffusion_fn / diffusion_dx_fn: Generic coefficient callables of x
  curves: Mapping[str, TimeFn] - alpha0/alpha1/beta0/beta1 curves of t (time-varying families)
  support: (lower, upper) - State domain used for quadrature of Generic invariant densities
  risk_free_rate: Optional[float] - When set, the drift is r*x (risk-neutral dynamics)

RAISES:
  ValidationError: sigma <= 0, kappa <= 0 for mean-reverting families, missing parameters

GUARANTEES:
  - Instances are hashable by identity and never mutated
  - CIR exposes the Feller index q = 2*kappa*alpha/sigma^2 - 1
"""
@dataclass(frozen=True, eq=False)
class ModelSpec:
    family: Family
    params: Mapping[str, float] = field(default_factory=dict)
    drift_fn: Optional[StateFn] = None
    diffusion_fn: Optional[StateFn] = None
    diffusion_dx_fn: Optional[StateFn] = None
    curves: Mapping[str, TimeFn] = field(default_factory=dict)
    support: tuple[float, float] = (-math.inf, math.inf)
    risk_free_rate: Optional[float] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "params", MappingProxyType({k: float(v) for k, v in self.params.items()}))
        object.__setattr__(self, "curves", MappingProxyType(dict(self.curves)))
        self._validate()
        if self.family is Family.CIR and self.feller_index < 0:
            logger.warning("CIR model violates the Feller condition: q=%.4f", self.feller_index)

    def _validate(self) -> None:
        missing = [name for name in PARAMETER_NAMES[self.family] if name not in self.params]
        if missing:
            raise ValidationError(
                f"{self.family.value} model is missing parameters: {', '.join(missing)}",
                details={"family": self.family.value, "missing": missing},
            )
        for name, value in self.params.items():
            if not math.isfinite(value):
                raise ValidationError(f"parameter {name} must be finite", details={"parameter": name})
        if "sigma" in self.params and self.params["sigma"] <= 0:
            raise ValidationError("sigma must be > 0", details={"sigma": self.params["sigma"]})
        if self.family in MEAN_REVERTING and self.params["kappa"] <= 0:
            raise ValidationError("kappa must be > 0 for mean-reverting families", details={"kappa": self.params["kappa"]})
        if self.family in {Family.CIR, Family.CKLS} and self.params["alpha"] <= 0:
            raise ValidationError("alpha must be > 0 for positive-domain mean-reverting families", details={"alpha": self.params["alpha"]})
        if self.family is Family.GENERIC and (self.drift_fn is None or self.diffusion_fn is None):
            raise ValidationError("generic models need drift_fn and diffusion_fn")
        required_curves = {
            Family.TIME_VARYING_CKLS: ("alpha0", "alpha1", "beta0", "beta1"),
            Family.SEMIPARAMETRIC_CKLS: ("alpha0", "beta0"),
        }.get(self.family, ())
        absent = [name for name in required_curves if name not in self.curves]
        if absent:
            raise ValidationError(
                f"{self.family.value} model is missing curves: {', '.join(absent)}",
                details={"missing": absent},
            )
        if not self.support[0] < self.support[1]:
            raise ValidationError("support must satisfy lower < upper", details={"support": list(self.support)})

    # ------------------------------------------------------------------
    # Constructors
    # ------------------------------------------------------------------

    @classmethod
    def gbm(cls, mu: float, sigma: float) -> "ModelSpec":
        return cls(Family.GBM, {"mu": mu, "sigma": sigma}, support=(0.0, math.inf))

    @classmethod
    def vasicek(cls, kappa: float, alpha: float, sigma: float) -> "ModelSpec":
        return cls(Family.VASICEK, {"kappa": kappa, "alpha": alpha, "sigma": sigma})

    @classmethod
    def cir(cls, kappa: float, alpha: float, sigma: float) -> "ModelSpec":
        return cls(Family.CIR, {"kappa": kappa, "alpha": alpha, "sigma": sigma}, support=(0.0, math.inf))

    @classmethod
    def ckls(cls, kappa: float, alpha: float, sigma: float, gamma: float) -> "ModelSpec":
        return cls(
            Family.CKLS,
            {"kappa": kappa, "alpha": alpha, "sigma": sigma, "gamma": gamma},
            support=(0.0, math.inf),
        )

    @classmethod
    def generic(
        cls,
        drift: StateFn,
        diffusion: StateFn,
        diffusion_dx: Optional[StateFn] = None,
        support: tuple[float, float] = (-math.inf, math.inf),
    ) -> "ModelSpec":
        return cls(
            Family.GENERIC,
            drift_fn=drift,
            diffusion_fn=diffusion,
            diffusion_dx_fn=diffusion_dx,
            support=support,
        )

    @classmethod
    def time_varying_ckls(cls, alpha0: TimeFn, alpha1: TimeFn, beta0: TimeFn, beta1: TimeFn) -> "ModelSpec":
        return cls(
            Family.TIME_VARYING_CKLS,
            curves={"alpha0": alpha0, "alpha1": alpha1, "beta0": beta0, "beta1": beta1},
            support=(0.0, math.inf),
        )

    @classmethod
    def semiparametric_ckls(cls, alpha0: TimeFn, alpha1: float, beta0: TimeFn, beta: float) -> "ModelSpec":
        return cls(
            Family.SEMIPARAMETRIC_CKLS,
            {"alpha1": alpha1, "beta": beta},
            curves={"alpha0": alpha0, "beta0": beta0},
            support=(0.0, math.inf),
        )

    @classmethod
    def from_parameters(cls, family: Family | str, params: Mapping[str, float]) -> "ModelSpec":
        """Build a named scalar-parameter family from a name -> value mapping."""
        family = Family(family)
        builders: dict[Family, Callable[..., ModelSpec]] = {
            Family.GBM: cls.gbm,
            Family.VASICEK: cls.vasicek,
            Family.CIR: cls.cir,
            Family.CKLS: cls.ckls,
        }
        if family not in builders:
            raise ValidationError(f"{family.value} cannot be built from scalar parameters")
        names = PARAMETER_NAMES[family]
        unknown = sorted(set(params) - set(names))
        if unknown:
            raise ValidationError(f"unknown parameters for {family.value}: {', '.join(unknown)}")
        missing = [name for name in names if name not in params]
        if missing:
            raise ValidationError(
                f"{family.value} model is missing parameters: {', '.join(missing)}",
                details={"missing": missing},
            )
        return builders[family](**{name: params[name] for name in names})

    def risk_neutral(self, rate: float) -> "ModelSpec":
        """Same diffusion, drift replaced by rate * x."""
        return dataclasses.replace(self, risk_free_rate=float(rate))

    # ------------------------------------------------------------------
    # Properties
    # ------------------------------------------------------------------

    @property
    def feller_index(self) -> float:
        if self.family is not Family.CIR:
            raise ValidationError("the Feller index is defined for CIR models only")
        p = self.params
        return 2.0 * p["kappa"] * p["alpha"] / p["sigma"] ** 2 - 1.0

    @property
    def is_feller(self) -> bool:
        return self.feller_index >= 0

    @property
    def is_time_homogeneous(self) -> bool:
        return self.family not in {Family.TIME_VARYING_CKLS, Family.SEMIPARAMETRIC_CKLS}

    @property
    def is_stationary(self) -> bool:
        if self.risk_free_rate is not None:
            return False
        return self.family in MEAN_REVERTING or self.family is Family.GENERIC

    @property
    def positive_domain(self) -> bool:
        return self.family in POSITIVE_DOMAIN

    @property
    def has_closed_form_transition(self) -> bool:
        return self.family in CLOSED_FORM_TRANSITION and (self.risk_free_rate is None or self.family is Family.GBM)

    def parameter_vector(self) -> FloatArray:
        return np.array([self.params[name] for name in PARAMETER_NAMES[self.family]], dtype=np.float64)

    # ------------------------------------------------------------------
    # Coefficients (vectorized, unchecked)
    # ------------------------------------------------------------------

    def _curve(self, name: str, t: npt.ArrayLike) -> FloatArray:
        return _as_array(self.curves[name](_as_array(t)))

    def drift(self, t: npt.ArrayLike, x: npt.ArrayLike) -> FloatArray:
        x = _as_array(x)
        if self.risk_free_rate is not None:
            return self.risk_free_rate * x
        p = self.params
        family = self.family
        if family is Family.GBM:
            return p["mu"] * x
        if family in MEAN_REVERTING:
            return p["kappa"] * (p["alpha"] - x)
        if family is Family.GENERIC:
            assert self.drift_fn is not None
            return _as_array(self.drift_fn(x)) * np.ones_like(x)
        if family is Family.TIME_VARYING_CKLS:
            return self._curve("alpha0", t) + self._curve("alpha1", t) * x
        return self._curve("alpha0", t) + p["alpha1"] * x

    def diffusion(self, t: npt.ArrayLike, x: npt.ArrayLike) -> FloatArray:
        x = _as_array(x)
        p = self.params
        family = self.family
        if family is Family.GBM:
            return p["sigma"] * x
        if family is Family.VASICEK:
            return np.full_like(x, p["sigma"])
        if family is Family.CIR:
            return p["sigma"] * np.sqrt(x)
        if family is Family.CKLS:
            return p["sigma"] * _power(x, p["gamma"])
        if family is Family.GENERIC:
            assert self.diffusion_fn is not None
            return _as_array(self.diffusion_fn(x)) * np.ones_like(x)
        if family is Family.TIME_VARYING_CKLS:
            return self._curve("beta0", t) * np.power(x, self._curve("beta1", t))
        return self._curve("beta0", t) * np.power(x, p["beta"])

    def diffusion_dx(self, t: npt.ArrayLike, x: npt.ArrayLike) -> FloatArray:
        """d sigma / dx: analytic for named families, central difference for Generic without one."""
        x = _as_array(x)
        p = self.params
        family = self.family
        if family is Family.GBM:
            return np.full_like(x, p["sigma"])
        if family is Family.VASICEK:
            return np.zeros_like(x)
        if family is Family.CIR:
            return p["sigma"] / (2.0 * np.sqrt(x))
        if family is Family.CKLS:
            return p["sigma"] * p["gamma"] * np.power(x, p["gamma"] - 1.0)
        if family is Family.GENERIC:
            if self.diffusion_dx_fn is not None:
                return _as_array(self.diffusion_dx_fn(x)) * np.ones_like(x)
            assert self.diffusion_fn is not None
            fn = self.diffusion_fn
            return _central_difference(lambda u: _as_array(fn(u)) * np.ones_like(u), x)
        if family is Family.TIME_VARYING_CKLS:
            b1 = self._curve("beta1", t)
            return self._curve("beta0", t) * b1 * np.power(x, b1 - 1.0)
        return self._curve("beta0", t) * p["beta"] * np.power(x, p["beta"] - 1.0)

    def diffusion_product(self, t: npt.ArrayLike, x: npt.ArrayLike) -> FloatArray:
        """sigma * d sigma/dx, in closed form where the factors would give 0 * inf at x = 0."""
        x = _as_array(x)
        p = self.params
        if self.family is Family.CIR:
            return np.full_like(x, 0.5 * p["sigma"] ** 2)
        if self.family is Family.CKLS:
            g = p["gamma"]
            return p["sigma"] ** 2 * g * np.power(x, 2.0 * g - 1.0)
        return self.diffusion(t, x) * self.diffusion_dx(t, x)

    def __repr__(self) -> str:
        params = ", ".join(f"{k}={v:g}" for k, v in self.params.items())
        suffix = f", r={self.risk_free_rate:g}" if self.risk_free_rate is not None else ""
        return f"ModelSpec({self.family.value}{', ' if params else ''}{params}{suffix})"
