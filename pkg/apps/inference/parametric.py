"""
Parametric estimation of the named families.

Pseudo (Euler) maximum likelihood, exact maximum likelihood, GMM on the
exponential moment conditions of the stationary law, and indirect inference
by simulation-based calibration of the pseudo estimates.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
import numpy.typing as npt
import statsmodels.api as sm
from scipy import optimize
from statsmodels.tools.numdiff import approx_fprime, approx_hess

from apps.core.dtos import FitResult
from apps.core.exceptions import (
    DiffLabError,
    ExtrapolationError,
    NumericalError,
    UnsupportedModelError,
    ValidationError,
)
from apps.inference.families import (
    as_params,
    bounds,
    coefficients,
    elasticity,
    estimable_family,
    euler_moments,
    exact_log_density,
    model_from_vector,
    parameter_names,
    require_domain,
    scale_of,
)
from apps.sde.catalog import Family
from apps.sde.paths import SamplePath, increments
from apps.simulation.plans import Scheme, SimPlan
from apps.simulation.services import simulate_many

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]

PENALTY = 1e10
POLISH_STEPS = 4
GMM_BATCHES = 20
RIDGE_CONDITION = 1e12
INDIRECT_SUBSTEPS = 10
INDIRECT_MAX_DIMENSION = 3


def _pairs(path: SamplePath, family: Family) -> tuple[FloatArray, FloatArray]:
    require_domain(family, path)
    x, y = increments(path, 1)
    if x.size < 3:
        raise ValidationError("fits need at least three valid transitions", details={"transitions": int(x.size)})
    return x, y


# ---------------------------------------------------------------------------
# Numerical maximum likelihood
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Optimum:
    theta: FloatArray
    value: float
    converged: bool
    message: str
    penalized: int


def _inside(theta: FloatArray, box: Sequence[tuple[float | None, float | None]]) -> bool:
    return all((lo is None or v >= lo) and (hi is None or v <= hi) for v, (lo, hi) in zip(theta, box))


def minimize_objective(
    objective: Callable[[FloatArray], float],
    start: FloatArray,
    box: Sequence[tuple[float | None, float | None]],
) -> Optimum:
    """Bounded quasi-Newton on scaled coordinates, then Newton polishing with numerical derivatives."""
    penalized = 0

    def guarded(theta: FloatArray) -> float:
        nonlocal penalized
        if not _inside(theta, box):
            penalized += 1
            return PENALTY
        try:
            value = float(objective(theta))
        except (DiffLabError, ValueError, FloatingPointError, ZeroDivisionError):
            value = math.nan
        if not math.isfinite(value):
            penalized += 1
            return PENALTY
        return value

    scale = scale_of(start)
    scaled_box = [
        (None if lo is None else lo / s, None if hi is None else hi / s) for (lo, hi), s in zip(box, scale)
    ]
    result = optimize.minimize(
        lambda z: guarded(z * scale),
        np.asarray(start, dtype=np.float64) / scale,
        method="L-BFGS-B",
        bounds=scaled_box,
        options={"ftol": 1e-13, "gtol": 1e-9, "maxiter": 2000},
    )
    z = np.asarray(result.x, dtype=np.float64)
    best = guarded(z * scale)
    for _ in range(POLISH_STEPS):
        gradient = approx_fprime(z, lambda v: guarded(v * scale), centered=True)
        hessian = approx_hess(z, lambda v: guarded(v * scale))
        try:
            step = np.linalg.solve(hessian, gradient)
        except np.linalg.LinAlgError:
            break
        candidate = z - step
        value = guarded(candidate * scale)
        if not value < best:
            break
        z, best = candidate, value
    gradient = approx_fprime(z, lambda v: guarded(v * scale), centered=True)
    stationary = bool(np.all(np.abs(gradient) < 1e-5 * max(1.0, abs(best))))
    converged = (bool(result.success) or stationary) and best < PENALTY
    return Optimum(z * scale, best, converged, str(result.message), penalized)


def _stderr_from_hessian(total_objective: Callable[[FloatArray], float], theta: FloatArray) -> tuple[FloatArray, str]:
    """Standard errors from the inverse observed information; NaN where it is not positive definite."""
    hessian = approx_hess(theta, total_objective)
    try:
        cov = np.linalg.inv(hessian)
    except np.linalg.LinAlgError:
        return np.full(theta.size, np.nan), "singular information matrix"
    variances = np.diag(cov)
    if np.any(~np.isfinite(variances)) or np.any(variances <= 0):
        return np.where(variances > 0, np.sqrt(np.abs(variances)), np.nan), "information matrix not positive definite"
    return np.sqrt(variances), ""


def _boundary(family: Family, theta: FloatArray) -> list[str]:
    hits = []
    for name, value, (lo, hi) in zip(parameter_names(family), theta, bounds(family)):
        if (lo is not None and value <= lo * (1 + 1e-6) + 1e-12) or (hi is not None and value >= hi):
            hits.append(name)
    return hits


def _fit_result(
    family: Family,
    method: str,
    theta: FloatArray,
    stderr: FloatArray,
    n_obs: int,
    mean_nll: Optional[float],
    converged: bool,
    diagnostics: dict,
    objective: Optional[float] = None,
) -> FitResult:
    boundary = _boundary(family, theta) if method in {"pseudo_mle", "exact_mle"} else []
    if boundary:
        logger.warning("%s %s fit on the parameter boundary: %s", family.value, method, ", ".join(boundary))
        diagnostics = {**diagnostics, "boundary": boundary}
    if not converged and not diagnostics:
        diagnostics = {"message": "optimizer did not converge"}
    return FitResult(
        family=family.value,
        method=method,  # type: ignore[arg-type]
        parameter_names=list(parameter_names(family)),
        estimates=[float(v) for v in theta],
        stderr=[float(v) if math.isnan(v) or v >= 0 else math.nan for v in stderr],
        loglik=None if mean_nll is None else float(-mean_nll * n_obs),
        objective=objective if objective is not None else mean_nll,
        n_obs=n_obs,
        converged=converged,
        diagnostics=diagnostics,
    )


# ---------------------------------------------------------------------------
# Pseudo maximum likelihood
# ---------------------------------------------------------------------------

def _drift_regression(x: FloatArray, y: FloatArray, delta: float):
    """OLS of the increment on (1, X)."""
    return sm.OLS(y - x, sm.add_constant(x, has_constant="add")).fit()


def _pseudo_vasicek(x: FloatArray, y: FloatArray, delta: float) -> tuple[FloatArray, FloatArray, dict]:
    ols = _drift_regression(x, y, delta)
    c0, c1 = (float(v) for v in ols.params)
    if c1 == 0.0:
        raise NumericalError("increments do not depend on the level; kappa is not identified")
    n = x.size
    kappa = -c1 / delta
    alpha = -c0 / c1
    sigma = math.sqrt(float(np.mean(ols.resid**2)) / delta)
    cov = np.asarray(ols.cov_params())
    jacobian = np.array([[0.0, -1.0 / delta], [-1.0 / c1, c0 / (c1 * c1)]])
    drift_cov = jacobian @ cov @ jacobian.T
    se = np.sqrt(np.maximum(np.diag(drift_cov), 0.0))
    stderr = np.array([se[0], se[1], sigma / math.sqrt(2.0 * n)])
    return np.array([kappa, alpha, sigma]), stderr, {"closed_form": True}


def _pseudo_gbm(x: FloatArray, y: FloatArray, delta: float) -> tuple[FloatArray, FloatArray, dict]:
    returns = y / x - 1.0
    n = returns.size
    mu = float(returns.mean()) / delta
    sigma = math.sqrt(float(returns.var()) / delta)
    stderr = np.array([sigma / math.sqrt(n * delta), sigma / math.sqrt(2.0 * n)])
    return np.array([mu, sigma]), stderr, {"closed_form": True}


def _gaussian_nll(family: Family, x: FloatArray, y: FloatArray, delta: float) -> Callable[[FloatArray], float]:
    def mean_nll(theta: FloatArray) -> float:
        mean, variance = euler_moments(family, as_params(family, theta), x, delta)
        return float(np.mean(0.5 * np.log(2.0 * math.pi * variance) + (y - mean) ** 2 / (2.0 * variance)))

    return mean_nll


def _pseudo_start(family: Family, x: FloatArray, y: FloatArray, delta: float) -> FloatArray:
    ols = _drift_regression(x, y, delta)
    c0, c1 = (float(v) for v in ols.params)
    kappa = -c1 / delta if c1 < 0 else 1.0 / delta / max(x.size, 1)
    alpha = -c0 / c1 if c1 < 0 else float(np.mean(x))
    alpha = alpha if alpha > 0 else float(np.mean(x))
    gamma = 0.5 if family is Family.CKLS else elasticity(family, {})
    sigma = math.sqrt(float(np.mean(np.asarray(ols.resid) ** 2 / np.power(x, 2.0 * gamma))) / delta)
    start = [kappa, alpha, sigma] + ([gamma] if family is Family.CKLS else [])
    return np.array(start)


"""
GOAL: Maximize the Gaussian likelihood of the Euler discretization.

PARAMETERS:
  path: SamplePath - Observations; positive for GBM, CIR and CKLS
  family: Family | str - gbm, vasicek, cir or ckls

RETURNS:
  FitResult - method "pseudo_mle"; closed form for GBM and Vasicek, numerical otherwise

RAISES:
  UnsupportedModelError: family without scalar parameters
  DomainError: non-positive observations for positive-domain families
  NumericalError: kappa not identified (Vasicek with level-independent increments)

GUARANTEES:
  - Vasicek estimates are conditional least squares on the increments
  - Parameters on the boundary (kappa or sigma at zero) are listed in diagnostics["boundary"]
"""
def fit_pseudo_mle(path: SamplePath, family: Family | str) -> FitResult:
    family = estimable_family(family)
    x, y = _pairs(path, family)
    n = x.size
    objective = _gaussian_nll(family, x, y, path.delta)
    if family in {Family.VASICEK, Family.GBM}:
        closed = _pseudo_vasicek if family is Family.VASICEK else _pseudo_gbm
        theta, stderr, diagnostics = closed(x, y, path.delta)
        with np.errstate(divide="ignore", invalid="ignore"):
            value = objective(theta) if theta[-1] > 0 else None
        if theta[-1] <= 0:
            diagnostics = {**diagnostics, "boundary": ["sigma"]}
            logger.warning("pseudo_mle: zero residual variance, sigma on the boundary")
        return _fit_result(family, "pseudo_mle", theta, stderr, n, value, True, diagnostics)

    start = _pseudo_start(family, x, y, path.delta)
    optimum = minimize_objective(objective, start, bounds(family))
    stderr, note = _stderr_from_hessian(lambda t: n * objective(t), optimum.theta)
    diagnostics = {"message": optimum.message, "start": start.tolist(), "penalized_evaluations": optimum.penalized}
    if note:
        diagnostics["stderr"] = note
    logger.info("pseudo_mle %s: %s", family.value, np.array2string(optimum.theta, precision=5))
    return _fit_result(family, "pseudo_mle", optimum.theta, stderr, n, optimum.value, optimum.converged, diagnostics)


# ---------------------------------------------------------------------------
# Exact maximum likelihood
# ---------------------------------------------------------------------------

def vasicek_ar1_estimates(path: SamplePath) -> dict[str, float]:
    """Closed-form Vasicek maximum likelihood from the AR(1) regression of X_{i+1} on X_i."""
    x, y = increments(path, 1)
    ols = sm.OLS(y, sm.add_constant(x, has_constant="add")).fit()
    a, b = (float(v) for v in ols.params)
    if not 0.0 < b < 1.0:
        raise NumericalError("AR(1) coefficient outside (0, 1); no mean-reverting Vasicek fit", details={"b": b})
    kappa = -math.log(b) / path.delta
    residual_variance = float(np.mean(ols.resid**2))
    return {
        "kappa": kappa,
        "alpha": a / (1.0 - b),
        "sigma": math.sqrt(residual_variance * 2.0 * kappa / (1.0 - b * b)),
    }


"""
GOAL: Maximize the exact conditional likelihood sum log p_delta(X_i | X_{i-1}).

PARAMETERS:
  path: SamplePath - Observations; positive for GBM and CIR
  family: Family | str - gbm, vasicek or cir
  start: Optional[Sequence[float]] - Initial parameters (default: pseudo-MLE, closed form for Vasicek)

RETURNS:
  FitResult - method "exact_mle", stderr from the observed information

RAISES:
  UnsupportedModelError: families without a closed-form transition density
  DomainError: non-positive observations for GBM and CIR

GUARANTEES:
  - The initial observation's marginal term is not included
  - Parameter values where the density cannot be evaluated get a penalty; their count is in diagnostics
"""
def fit_exact_mle(path: SamplePath, family: Family | str, start: Optional[Sequence[float]] = None) -> FitResult:
    family = estimable_family(family)
    if family is Family.CKLS:
        raise UnsupportedModelError("no closed-form transition density for ckls", details={"family": family.value})
    x, y = _pairs(path, family)
    n = x.size

    def mean_nll(theta: FloatArray) -> float:
        return -float(np.mean(exact_log_density(family, as_params(family, theta), path.delta, x, y)))

    if start is None:
        if family is Family.VASICEK:
            initial = np.array(list(vasicek_ar1_estimates(path).values()))
        else:
            initial = np.array(fit_pseudo_mle(path, family).estimates)
    else:
        initial = np.asarray(start, dtype=np.float64)
    optimum = minimize_objective(mean_nll, initial, bounds(family))
    stderr, note = _stderr_from_hessian(lambda t: n * mean_nll(t), optimum.theta)
    diagnostics = {"message": optimum.message, "start": initial.tolist(), "penalized_evaluations": optimum.penalized}
    if note:
        diagnostics["stderr"] = note
    if optimum.penalized:
        logger.info("exact_mle %s: %d penalized evaluations", family.value, optimum.penalized)
    return _fit_result(family, "exact_mle", optimum.theta, stderr, n, optimum.value, optimum.converged, diagnostics)


# ---------------------------------------------------------------------------
# GMM on E[e^{-aX} (mu(X) - a sigma^2(X) / 2)] = 0
# ---------------------------------------------------------------------------

def _moment_contributions(family: Family, params: Mapping[str, float], x: FloatArray, a_values: FloatArray) -> FloatArray:
    drift, variance = coefficients(family, params, x)
    weight = np.exp(-np.outer(x, a_values))
    return weight * (drift[:, None] - 0.5 * a_values[None, :] * variance[:, None])


def _long_run_covariance(contributions: FloatArray, n_batches: int = GMM_BATCHES) -> FloatArray:
    """Batch-means estimate of the long-run covariance of the moment contributions."""
    n = contributions.shape[0]
    n_batches = max(2, min(n_batches, n // 2))
    size = n // n_batches
    means = contributions[: size * n_batches].reshape(n_batches, size, -1).mean(axis=1)
    return size * np.atleast_2d(np.cov(means, rowvar=False, ddof=1))


def _weight_matrix(covariance: FloatArray) -> tuple[FloatArray, bool]:
    m = covariance.shape[0]
    ridged = not np.isfinite(np.linalg.cond(covariance)) or np.linalg.cond(covariance) > RIDGE_CONDITION
    if ridged:
        covariance = covariance + 1e-8 * max(float(np.trace(covariance)) / m, 1e-300) * np.eye(m)
        logger.warning("GMM weight matrix is near singular; ridge-regularized")
    return np.linalg.inv(covariance), ridged


"""
GOAL: Sample means and batch-means standard errors of the exponential moment conditions.

PARAMETERS:
  path: SamplePath - Stationary-looking observations
  family: Family | str - vasicek, cir or ckls
  params: Mapping[str, float] - Parameter values to evaluate at
  a_values: Sequence[float] - Positive exponents a

RETURNS:
  tuple[FloatArray, FloatArray] - (mean, stderr) per a
"""
def moment_conditions(
    path: SamplePath, family: Family | str, params: Mapping[str, float], a_values: Sequence[float]
) -> tuple[FloatArray, FloatArray]:
    family = estimable_family(family)
    a = _a_values(a_values)
    contributions = _moment_contributions(family, params, np.asarray(path.values), a)
    covariance = _long_run_covariance(contributions)
    return contributions.mean(axis=0), np.sqrt(np.diag(covariance) / contributions.shape[0])


def _a_values(a_values: Sequence[float]) -> FloatArray:
    a = np.asarray(list(a_values), dtype=np.float64)
    if a.size == 0 or np.any(~np.isfinite(a)) or np.any(a <= 0):
        raise ValidationError("a_values must be a non-empty set of positive reals", details={"a_values": a.tolist()})
    return a


def _warn_if_drifting(x: FloatArray) -> bool:
    half = x.size // 2
    gap = abs(float(x[:half].mean() - x[half:].mean()))
    drifting = gap > 2.0 * float(x.std())
    if drifting:
        logger.warning("GMM: the two halves of the sample have very different means; the path may not be stationary")
    return drifting


"""
GOAL: GMM estimation from the moment conditions E[e^{-aX}(mu(X) - a sigma^2(X) / 2)] = 0.

PARAMETERS:
  path: SamplePath - Stationary-looking observations
  family: Family | str - vasicek, cir or ckls
  a_values: Sequence[float] - Positive exponents, one moment each
  two_step: bool - Follow the identity-weight step with the batch-means optimal weight
  fixed: Optional[Mapping[str, float]] - Parameters held fixed (default: kappa at its pseudo-MLE value)

RETURNS:
  FitResult - method "gmm"; fixed parameters carry NaN stderr; diagnostics include
    sigma2_over_kappa, the moment values and the weight used

RAISES:
  UnsupportedModelError: GBM (no stationary law)
  ValidationError: fewer moments than free parameters, bad a_values

GUARANTEES:
  - The conditions only identify sigma^2 / kappa jointly with alpha (and gamma), so
    kappa is fixed unless the caller fixes another parameter instead
  - A near-singular weight matrix is ridge-regularized with a warning
"""
def fit_gmm(
    path: SamplePath,
    family: Family | str,
    a_values: Sequence[float],
    two_step: bool = False,
    fixed: Optional[Mapping[str, float]] = None,
) -> FitResult:
    family = estimable_family(family)
    if family is Family.GBM:
        raise UnsupportedModelError("GMM on the stationary moment conditions needs a stationary family")
    require_domain(family, path)
    a = _a_values(a_values)
    x = np.asarray(path.values, dtype=np.float64)
    names = parameter_names(family)
    pseudo = fit_pseudo_mle(path, family)
    if fixed is None:
        fixed = {"kappa": pseudo.as_dict()["kappa"]}
    unknown = sorted(set(fixed) - set(names))
    if unknown:
        raise ValidationError(f"unknown fixed parameters: {', '.join(unknown)}")
    free = [name for name in names if name not in fixed]
    if a.size < len(free):
        raise ValidationError(
            "GMM needs at least as many moments as free parameters",
            details={"moments": int(a.size), "free": free},
        )
    drifting = _warn_if_drifting(x)
    box = [b for name, b in zip(names, bounds(family)) if name in free]
    start = np.array([pseudo.as_dict()[name] for name in free])
    scale = scale_of(start)

    def params_of(z: FloatArray) -> dict[str, float]:
        values = dict(fixed)
        values.update({name: float(v) for name, v in zip(free, z * scale)})
        return values

    def mean_moments(z: FloatArray) -> FloatArray:
        return _moment_contributions(family, params_of(z), x, a).mean(axis=0)

    def solve(weight: FloatArray, z0: FloatArray) -> optimize.OptimizeResult:
        root = np.linalg.cholesky(weight)
        lower = [-np.inf if lo is None else lo / s for (lo, _), s in zip(box, scale)]
        upper = [np.inf if hi is None else hi / s for (_, hi), s in zip(box, scale)]
        z0 = np.clip(z0, lower, upper)
        return optimize.least_squares(
            lambda z: root.T @ mean_moments(z), z0, bounds=(lower, upper), xtol=1e-15, ftol=1e-15, gtol=1e-15,
            max_nfev=5000,
        )

    weight = np.eye(a.size)
    result = solve(weight, start / scale)
    ridged = False
    if two_step:
        covariance = _long_run_covariance(_moment_contributions(family, params_of(result.x), x, a))
        weight, ridged = _weight_matrix(covariance)
        result = solve(weight, result.x)

    z = np.asarray(result.x)
    estimates = params_of(z)
    moments = mean_moments(z)
    covariance = _long_run_covariance(_moment_contributions(family, estimates, x, a))
    jacobian = np.asarray(approx_fprime(z, mean_moments, centered=True)).reshape(a.size, len(free)) / scale[None, :]
    bread_inv = jacobian.T @ weight @ jacobian
    try:
        bread = np.linalg.inv(bread_inv)
        sandwich = bread @ jacobian.T @ weight @ covariance @ weight @ jacobian @ bread / x.size
        free_se = np.sqrt(np.maximum(np.diag(sandwich), 0.0))
    except np.linalg.LinAlgError:
        free_se = np.full(len(free), np.nan)
    se_by_name = dict(zip(free, free_se))
    theta = np.array([estimates[name] for name in names])
    stderr = np.array([se_by_name.get(name, math.nan) for name in names])
    objective = float(moments @ weight @ moments)
    diagnostics = {
        "fixed": dict(fixed),
        "a_values": a.tolist(),
        "moments": moments.tolist(),
        "two_step": two_step,
        "ridge": ridged,
        "sigma2_over_kappa": estimates["sigma"] ** 2 / estimates["kappa"],
        "possibly_nonstationary": drifting,
        "message": str(result.message),
    }
    logger.info("gmm %s: objective %.3e with %d moments", family.value, objective, a.size)
    return _fit_result(
        family, "gmm", theta, stderr, int(x.size), None, bool(result.success), diagnostics, objective=objective
    )


# ---------------------------------------------------------------------------
# Indirect inference
# ---------------------------------------------------------------------------

"""
GOAL: Invert a simulated binding map theta -> E[theta_hat | theta] at an observed estimate.

PARAMETERS:
  grid: Sequence[float] - Parameter values the map was simulated at - >= 2 points
  binding: Sequence[float] - Mean estimate at each grid value
  observed: float - Estimate from the data

RETURNS:
  tuple[float, float] - (calibrated value, slope of the map at that value)

RAISES:
  ValidationError: mismatched or too short inputs
  ExtrapolationError: observed outside the range of the map; details carry the range
  NumericalError: the map is flat

GUARANTEES:
  - The identity map returns observed unchanged
  - A non-monotone map is made monotone (running maximum along its trend) with a warning
"""
def invert_binding_map(grid: Sequence[float], binding: Sequence[float], observed: float) -> tuple[float, float]:
    g = np.asarray(grid, dtype=np.float64)
    b = np.asarray(binding, dtype=np.float64)
    keep = np.isfinite(b)
    g, b = g[keep], b[keep]
    if g.size < 2 or g.size != b.size:
        raise ValidationError("binding map needs at least two finite nodes")
    order = np.argsort(g)
    g, b = g[order], b[order]
    increasing = b[-1] >= b[0]
    monotone = np.maximum.accumulate(b) if increasing else np.minimum.accumulate(b)
    if not np.array_equal(monotone, b):
        logger.warning("binding map is not monotone; using its monotone envelope")
    b = monotone
    low, high = float(b.min()), float(b.max())
    if high - low <= 0:
        raise NumericalError("binding map is flat; the parameter is not identified by the pseudo estimate")
    if not low <= observed <= high:
        raise ExtrapolationError(
            "observed estimate lies outside the simulated binding map",
            details={"observed": observed, "range": [low, high], "grid": [float(g[0]), float(g[-1])]},
        )
    xs, ys = (b, g) if increasing else (b[::-1], g[::-1])
    value = float(np.interp(observed, xs, ys))
    k = int(np.clip(np.searchsorted(xs, observed, side="right") - 1, 0, xs.size - 2))
    while k > 0 and xs[k + 1] == xs[k]:
        k -= 1
    slope = float((xs[k + 1] - xs[k]) / (ys[k + 1] - ys[k])) if ys[k + 1] != ys[k] else math.nan
    return value, slope


def _default_grid(name: str, value: float) -> FloatArray:
    if name == "alpha" or name == "mu":
        spread = max(abs(value), 1e-3)
        return np.linspace(value - 0.5 * spread, value + 0.5 * spread, 11)
    return value * np.linspace(0.5, 3.0, 11)


def _binding_node(
    family: Family, theta: Mapping[str, float], path: SamplePath, name: str, n_sim: int, seed: int
) -> float:
    model = model_from_vector(family, [theta[k] for k in parameter_names(family)])
    exact = model.has_closed_form_transition
    plan = SimPlan(
        model=model,
        x0=float(path.values[0]),
        delta=path.delta,
        n_steps=path.n,
        substeps=1 if exact else INDIRECT_SUBSTEPS,
        seed=seed,
        scheme=Scheme.EXACT if exact else Scheme.EULER,
    )
    paths = simulate_many(plan, n_sim)
    values = []
    for row in paths:
        try:
            values.append(fit_pseudo_mle(SamplePath(path.delta, row), family).as_dict()[name])
        except DiffLabError as exc:
            logger.debug("indirect: simulated fit failed at %s=%.6g: %s", name, theta[name], exc.message)
    return float(np.mean(values)) if values else math.nan


"""
GOAL: Correct pseudo-MLE bias by inverting a simulated binding map per parameter.

PARAMETERS:
  path: SamplePath - Observations
  family: Family | str - gbm, vasicek or cir
  n_sim: int - Simulated paths per grid node - >= 1
  theta_grid: Optional[Mapping[str, Sequence[float]]] - Grid per calibrated parameter
    (default: every parameter on an 11-point grid around its pseudo estimate)
  seed: int - Simulation seed, shared across nodes

RETURNS:
  FitResult - method "indirect"; uncalibrated parameters keep their pseudo estimates;
    stderr = pseudo stderr / |slope of the binding map|

RAISES:
  UnsupportedModelError: families with more than three parameters
  ExtrapolationError: a pseudo estimate outside its binding map
  ValidationError: unknown grid parameters or n_sim < 1

GUARANTEES:
  - Companion parameters are held at their pseudo estimates while one parameter is calibrated
  - Every node uses the same simulation seed
"""
def fit_indirect(
    path: SamplePath,
    family: Family | str,
    n_sim: int = 20,
    theta_grid: Optional[Mapping[str, Sequence[float]]] = None,
    seed: int = 0,
) -> FitResult:
    family = estimable_family(family)
    names = parameter_names(family)
    if len(names) > INDIRECT_MAX_DIMENSION:
        raise UnsupportedModelError(
            "indirect inference is limited to families with at most three parameters",
            details={"family": family.value, "dimension": len(names)},
        )
    if n_sim < 1:
        raise ValidationError("n_sim must be >= 1", details={"n_sim": n_sim})
    pseudo = fit_pseudo_mle(path, family)
    observed = pseudo.as_dict()
    observed_se = pseudo.stderr_dict()
    grids = {name: np.asarray(values, dtype=np.float64) for name, values in (theta_grid or {}).items()}
    unknown = sorted(set(grids) - set(names))
    if unknown:
        raise ValidationError(f"unknown grid parameters: {', '.join(unknown)}")
    if not grids:
        grids = {name: _default_grid(name, observed[name]) for name in names}

    calibrated = dict(observed)
    stderr = dict(observed_se)
    binding_maps = {}
    for name, grid in grids.items():
        binding = []
        for value in grid:
            theta = {**observed, name: float(value)}
            try:
                binding.append(_binding_node(family, theta, path, name, n_sim, seed))
            except DiffLabError as exc:
                logger.debug("indirect: node %s=%.6g skipped: %s", name, value, exc.message)
                binding.append(math.nan)
        binding_maps[name] = {"grid": grid.tolist(), "binding": binding}
        value, slope = invert_binding_map(grid, binding, observed[name])
        calibrated[name] = value
        stderr[name] = observed_se[name] / abs(slope) if slope and math.isfinite(slope) else math.nan
        logger.info("indirect %s: %s %.6g -> %.6g", family.value, name, observed[name], value)

    theta = np.array([calibrated[name] for name in names])
    diagnostics = {
        "pseudo_mle": observed,
        "binding": binding_maps,
        "n_sim": n_sim,
        "seed": seed,
        "calibrated": sorted(grids),
    }
    return _fit_result(
        family, "indirect", theta, np.array([stderr[name] for name in names]), pseudo.n_obs, None, True, diagnostics
    )
