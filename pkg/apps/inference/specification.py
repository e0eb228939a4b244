"""
Specification tests built on the nonparametric transition density, and the
minimum-distance estimator that shares their machinery.
"""

from __future__ import annotations

import logging
import math
from typing import Callable, Literal, Optional, Sequence

import numpy as np
import numpy.typing as npt
from scipy import integrate

from apps.core import rng
from apps.core.conf import default_n_boot, grid_points
from apps.core.dtos import FitResult, TestResult
from apps.core.exceptions import DiffLabError, UnsupportedModelError, ValidationError
from apps.core.parallel import parallel_map
from apps.inference.families import (
    bounds,
    estimable_family,
    exact_log_density,
    model_from_vector,
    parameter_names,
)
from apps.inference.parametric import fit_exact_mle, fit_pseudo_mle, minimize_objective
from apps.inference.transition import (
    DensitySurface,
    density_at_pairs,
    estimate_transition_density,
    estimate_transition_distribution,
    parametric_surface,
    truncation_region,
)
from apps.sde.catalog import Family, ModelSpec
from apps.sde.paths import SamplePath, increments
from apps.sde.services import invariant_density
from apps.simulation.plans import STATIONARY, Scheme, SimPlan
from apps.simulation.services import simulate
from apps.smoothing.bandwidth import silverman_bandwidth
from apps.smoothing.kernels import KernelShape, KernelSpec
from apps.smoothing.services import kernel_density

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]

MAX_FAILED_SHARE = 0.1
CLOSED_FORM = frozenset({Family.GBM, Family.VASICEK, Family.CIR})
Norm = Literal["L2_density", "L2_cdf"]
Resampler = Literal["local_markov", "block"]


# ---------------------------------------------------------------------------
# Shared pieces
# ---------------------------------------------------------------------------

def _closed_form_family(family: Family | str) -> Family:
    family = estimable_family(family)
    if family not in CLOSED_FORM:
        raise UnsupportedModelError(
            f"{family.value} has no closed-form transition law to test against",
            details={"family": family.value, "supported": sorted(f.value for f in CLOSED_FORM)},
        )
    return family


def reference_bandwidths(path: SamplePath, lag: int = 1) -> tuple[float, float]:
    """Reference-rule (h1, h2): Epanechnikov in the state, gaussian in the increment."""
    x, y = increments(path, lag)
    return silverman_bandwidth(x, KernelShape.EPANECHNIKOV), silverman_bandwidth(y - x, KernelShape.GAUSSIAN)


def _resolve(path: SamplePath, h1: Optional[float], h2: Optional[float]) -> tuple[float, float]:
    if h1 is None or h2 is None:
        r1, r2 = reference_bandwidths(path)
        h1 = r1 if h1 is None else h1
        h2 = r2 if h2 is None else h2
    if not (h1 > 0 and h2 > 0):
        raise ValidationError("bandwidths must be > 0", details={"h1": h1, "h2": h2})
    return float(h1), float(h2)


def _n_boot(n_boot: Optional[int]) -> int:
    n_boot = default_n_boot() if n_boot is None else int(n_boot)
    if n_boot < 1:
        raise ValidationError("n_boot must be >= 1", details={"n_boot": n_boot})
    return n_boot


def empirical_x_weights(x: FloatArray, x_grid: FloatArray, truncation: tuple[float, float]) -> FloatArray:
    """Share of the conditioning states (inside the truncation interval) nearest to each grid node."""
    inside = x[(x >= truncation[0]) & (x <= truncation[1])]
    if inside.size == 0:
        raise ValidationError("no conditioning state lies inside the truncation interval")
    edges = 0.5 * (x_grid[1:] + x_grid[:-1])
    counts = np.bincount(np.searchsorted(edges, inside), minlength=x_grid.size).astype(np.float64)
    return counts / counts.sum()


def surface_distance(
    a: DensitySurface,
    b: DensitySurface,
    x_weights: Optional[FloatArray] = None,
    power: float = 2.0,
    y_range: Optional[tuple[float, float]] = None,
) -> float:
    """sum_x w(x) int |a - b|^power dy over y_range (default: a's truncation interval)."""
    if a.density.shape != b.density.shape or not (
        np.array_equal(a.x_grid, b.x_grid) and np.array_equal(a.y_grid, b.y_grid)
    ):
        raise ValidationError("surfaces must share their grids")
    low, high = a.truncation if y_range is None else y_range
    cols = (a.y_grid >= low) & (a.y_grid <= high)
    if cols.sum() < 2:
        raise ValidationError("fewer than two y-grid points inside the integration range")
    weights = np.full(a.x_grid.size, 1.0 / a.x_grid.size) if x_weights is None else np.asarray(x_weights)
    gap = np.abs(a.density[:, cols] - b.density[:, cols]) ** power
    return float(weights @ integrate.trapezoid(gap, a.y_grid[cols], axis=1))


def _null_plan(model: ModelSpec, path: SamplePath, seed: int, stationary: bool = False) -> SimPlan:
    start = STATIONARY if stationary else float(path.values[0])
    return SimPlan(model=model, x0=start, delta=path.delta, n_steps=path.n, seed=seed, scheme=Scheme.EXACT)


def _null_path(model: ModelSpec, path: SamplePath, seed: int, stationary: bool = False) -> SamplePath:
    return simulate(_null_plan(model, path, seed, stationary))


"""
GOAL: Run bootstrap replicates of a statistic and turn them into a p-value.

PARAMETERS:
  name: str - Test name for logs and the result
  statistic: float - Observed value
  replicate: Callable[[int], float] - Statistic on one replicate built from a seed
  n_boot: int - Number of replicates
  seed: int - Root seed
  diagnostics: dict - Extra result fields

RETURNS:
  TestResult - p = (1 + #{T* >= T}) / (1 + valid replicates)

GUARANTEES:
  - Replicates that raise DiffLabError or return NaN are excluded and counted
  - flagged when more than 10% of replicates fail
"""
def bootstrap_test(
    name: str, statistic: float, replicate: Callable[[int], float], n_boot: int, seed: int, diagnostics: dict
) -> TestResult:
    def guarded(replicate_seed: int) -> float:
        try:
            return float(replicate(replicate_seed))
        except DiffLabError as exc:
            logger.debug("%s: replicate failed: %s", name, exc.message)
            return math.nan

    draws = np.array(parallel_map(guarded, rng.spawn_seeds(seed, n_boot)))
    valid = draws[np.isfinite(draws)]
    n_failed = int(n_boot - valid.size)
    flagged = n_failed > MAX_FAILED_SHARE * n_boot
    if flagged:
        logger.warning("%s: %d of %d bootstrap replicates failed", name, n_failed, n_boot)
    p_value = float((1 + np.sum(valid >= statistic)) / (1 + valid.size))
    logger.info("%s: T=%.6g p=%.4f over %d replicates", name, statistic, p_value, valid.size)
    return TestResult(
        test=name,
        statistic=statistic,
        p_value=p_value,
        n_boot=n_boot,
        n_failed=n_failed,
        flagged=flagged,
        diagnostics=diagnostics,
    )


# ---------------------------------------------------------------------------
# GLR test against a parametric transition density
# ---------------------------------------------------------------------------

def glr_terms(
    path: SamplePath, fit: FitResult, h1: float, h2: float, truncation: tuple[float, float]
) -> dict:
    """Nonparametric and parametric log-likelihoods over one shared set of truncated transitions."""
    family = Family(fit.family)
    x, y = increments(path, 1)
    candidates = np.flatnonzero((x >= truncation[0]) & (x <= truncation[1]) & (y >= truncation[0]) & (y <= truncation[1]))
    if candidates.size == 0:
        raise ValidationError("no transition lies inside the truncation region")
    nonparametric = density_at_pairs(path, h1, h2, candidates)
    with np.errstate(divide="ignore", invalid="ignore"):
        parametric = exact_log_density(family, fit.as_dict(), path.delta, x[candidates], y[candidates])
    keep = (nonparametric > 0) & np.isfinite(parametric)
    if not keep.any():
        raise ValidationError("no transition has a positive nonparametric density")
    index = candidates[keep]
    loglik_np = float(np.sum(np.log(nonparametric[keep])))
    loglik_par = float(np.sum(parametric[keep]))
    return {
        "statistic": loglik_np - loglik_par,
        "loglik_nonparametric": loglik_np,
        "loglik_parametric": loglik_par,
        "index": index,
        "n_excluded": int(candidates.size - index.size),
    }


"""
GOAL: Generalized likelihood ratio test of a parametric family against the double-kernel density.

PARAMETERS:
  path: SamplePath - Observations
  family: Family | str - gbm, vasicek or cir (closed-form transition density)
  h1: Optional[float] - x bandwidth (default: reference rule, kept for all replicates)
  h2: Optional[float] - y bandwidth (default: reference rule, kept for all replicates)
  truncation: Optional[tuple[float, float]] - State interval for x and y (default 5%-95% quantiles)
  n_boot: Optional[int] - Bootstrap replicates (default DIFFLAB_N_BOOT)
  seed: int - Root seed

RETURNS:
  TestResult - test "glr_transition"; statistic = loglik_nonparametric - loglik_parametric,
    both over the same transitions; parametric bootstrap under the exact-MLE fit

RAISES:
  UnsupportedModelError: families without a closed-form transition density
  ValidationError: empty truncation region, bad bandwidths

GUARANTEES:
  - Transitions where the nonparametric density is not positive are dropped from both terms;
    their count is diagnostics["n_excluded"]
  - Identical inputs and seed give identical results
"""
def glr_transition_test(
    path: SamplePath,
    family: Family | str,
    h1: Optional[float] = None,
    h2: Optional[float] = None,
    truncation: Optional[tuple[float, float]] = None,
    n_boot: Optional[int] = None,
    seed: int = 0,
) -> TestResult:
    family = _closed_form_family(family)
    n_boot = _n_boot(n_boot)
    h1, h2 = _resolve(path, h1, h2)
    region = truncation_region(path) if truncation is None else tuple(truncation)
    fit = fit_exact_mle(path, family)
    terms = glr_terms(path, fit, h1, h2, region)
    model = model_from_vector(family, fit.estimates)

    def replicate(replicate_seed: int) -> float:
        sample = _null_path(model, path, replicate_seed)
        return glr_terms(sample, fit_exact_mle(sample, family), h1, h2, region)["statistic"]

    diagnostics = {
        "family": family.value,
        "estimates": fit.as_dict(),
        "loglik_nonparametric": terms["loglik_nonparametric"],
        "loglik_parametric": terms["loglik_parametric"],
        "n_evaluated": int(terms["index"].size),
        "n_excluded": terms["n_excluded"],
        "h1": h1,
        "h2": h2,
        "truncation": list(region),
    }
    return bootstrap_test("glr_transition", terms["statistic"], replicate, n_boot, seed, diagnostics)


# ---------------------------------------------------------------------------
# Distance test
# ---------------------------------------------------------------------------

def _distance_statistic(
    path: SamplePath, family: Family, norm: Norm, h1: float, h2: float, region: tuple[float, float]
) -> tuple[float, FitResult]:
    fit = fit_exact_mle(path, family)
    model = model_from_vector(family, fit.estimates)
    x_grid = np.linspace(region[0], region[1], grid_points())
    estimate = estimate_transition_density(path, h1, h2, x_grid=x_grid, truncation=region)
    kind = "density" if norm == "L2_density" else "cdf"
    if kind == "cdf":
        estimate = estimate_transition_distribution(estimate)
    reference = parametric_surface(model, path.delta, estimate.x_grid, estimate.y_grid, region, kind=kind)
    x, _ = increments(path, 1)
    return surface_distance(estimate, reference, empirical_x_weights(x, x_grid, region)), fit


"""
GOAL: Quadratic distance between the nonparametric and the fitted parametric transition law.

PARAMETERS:
  path: SamplePath - Observations
  family: Family | str - gbm, vasicek or cir
  norm: str - "L2_density" (densities) or "L2_cdf" (distributions)
  h1, h2, truncation, n_boot, seed - As in glr_transition_test

RETURNS:
  TestResult - test "distance"; statistic = sum_x w(x) int_{y in truncation} (p_hat - p_theta)^2 dy,
    w the empirical distribution of conditioning states inside the truncation interval

RAISES:
  UnsupportedModelError: families without a closed-form transition law
  ValidationError: unknown norm
"""
def distance_test(
    path: SamplePath,
    family: Family | str,
    norm: Norm = "L2_density",
    h1: Optional[float] = None,
    h2: Optional[float] = None,
    truncation: Optional[tuple[float, float]] = None,
    n_boot: Optional[int] = None,
    seed: int = 0,
) -> TestResult:
    if norm not in ("L2_density", "L2_cdf"):
        raise ValidationError("norm must be L2_density or L2_cdf", details={"norm": norm})
    family = _closed_form_family(family)
    n_boot = _n_boot(n_boot)
    h1, h2 = _resolve(path, h1, h2)
    region = truncation_region(path) if truncation is None else tuple(truncation)
    statistic, fit = _distance_statistic(path, family, norm, h1, h2, region)
    model = model_from_vector(family, fit.estimates)

    def replicate(replicate_seed: int) -> float:
        value, _ = _distance_statistic(_null_path(model, path, replicate_seed), family, norm, h1, h2, region)
        return value

    diagnostics = {
        "family": family.value,
        "norm": norm,
        "estimates": fit.as_dict(),
        "h1": h1,
        "h2": h2,
        "truncation": list(region),
    }
    return bootstrap_test("distance", statistic, replicate, n_boot, seed, diagnostics)


# ---------------------------------------------------------------------------
# Markov property
# ---------------------------------------------------------------------------

def chapman_kolmogorov(p_xz: FloatArray, p_zy: FloatArray, z_grid: FloatArray) -> FloatArray:
    """int p(z | x) p(y | z) dz by the trapezoid rule on z_grid."""
    z = np.asarray(z_grid, dtype=np.float64)
    weights = np.empty_like(z)
    steps = np.diff(z)
    weights[0], weights[-1] = steps[0] / 2.0, steps[-1] / 2.0
    weights[1:-1] = (steps[:-1] + steps[1:]) / 2.0
    return (np.asarray(p_xz) * weights[None, :]) @ np.asarray(p_zy)


def _markov_gap(path: SamplePath, h1: float, h2: float, grid: FloatArray) -> tuple[FloatArray, FloatArray]:
    """p_2 - CK(p_1) on the grid, with the empirical weights of the lag-2 conditioning states."""
    region = (float(grid[0]), float(grid[-1]))
    one = estimate_transition_density(path, h1, h2, x_grid=grid, y_grid=grid, truncation=region)
    two = estimate_transition_density(path, h1, h2, x_grid=grid, y_grid=grid, lag=2, truncation=region)
    x, _ = increments(path, 2)
    return two.density - chapman_kolmogorov(one.density, one.density, grid), empirical_x_weights(x, grid, region)


def _markov_statistic(gap: FloatArray, weights: FloatArray, grid: FloatArray, power: float) -> float:
    return float(weights @ integrate.trapezoid(np.abs(gap) ** power, grid, axis=1))


def local_markov_resample(path: SamplePath, h: float, generator: np.random.Generator) -> SamplePath:
    """
    Markov chain on the observed transitions: from state s, jump to X_{j+1} with probability
    proportional to K_h(s - X_j) (Epanechnikov). Imposes the Markov property and nothing else.
    """
    x, y = increments(path, 1)
    order = np.argsort(x, kind="stable")
    sorted_x, sorted_y = x[order], y[order]
    out = np.empty(path.n + 1)
    out[0] = path.values[0]
    for t in range(path.n):
        lo, hi = np.searchsorted(sorted_x, [out[t] - h, out[t] + h], side="left")
        if hi <= lo:
            nearest = int(np.clip(np.searchsorted(sorted_x, out[t]), 0, sorted_x.size - 1))
            out[t + 1] = sorted_y[nearest]
            continue
        u = (sorted_x[lo:hi] - out[t]) / h
        weights = np.maximum(1.0 - u * u, 0.0)
        total = weights.sum()
        pick = lo + (generator.choice(hi - lo, p=weights / total) if total > 0 else (hi - lo) // 2)
        out[t + 1] = sorted_y[pick]
    return SamplePath(path.delta, out, path.origin_time)


def block_resample(path: SamplePath, generator: np.random.Generator) -> SamplePath:
    """Circular block bootstrap of the observations with block length ceil(n^(1/3))."""
    n = path.values.size
    length = max(1, int(math.ceil(n ** (1.0 / 3.0))))
    starts = generator.integers(0, n, size=int(math.ceil(n / length)))
    index = (starts[:, None] + np.arange(length)[None, :]).reshape(-1)[:n] % n
    return SamplePath(path.delta, path.values[index], path.origin_time)


"""
GOAL: Test the Markov property through the Chapman-Kolmogorov identity p_2(y|x) = int p_1(y|z) p_1(z|x) dz.

PARAMETERS:
  path: SamplePath - Observations - at least 100 lag-2 transitions
  h1, h2: Optional[float] - Bandwidths for both lags (default: reference rule on lag 1)
  grid: Optional[array] - Common x/z/y grid (default: grid_points() over the truncation interval)
  n_boot: Optional[int] - Bootstrap replicates
  seed: int - Root seed
  squared: bool - Integrate squared instead of absolute differences
  resampler: str - "block" (default, circular block bootstrap) or "local_markov"

RETURNS:
  TestResult - test "markov"; statistic = sum_x w(x) int |p_2 - CK(p_1)|^power dy on the grid

GUARANTEES:
  - The block resampler keeps the data's dependence within blocks of length ceil(n^(1/3)); its
    replicate statistics integrate |gap* - gap|, the gap recentred at the observed one
  - The local Markov resampler draws replicates that are Markov by construction and keep
    the estimated one-step dynamics
"""
def markov_test(
    path: SamplePath,
    h1: Optional[float] = None,
    h2: Optional[float] = None,
    grid: Optional[npt.ArrayLike] = None,
    n_boot: Optional[int] = None,
    seed: int = 0,
    squared: bool = False,
    resampler: Resampler = "block",
) -> TestResult:
    if resampler not in ("local_markov", "block"):
        raise ValidationError("resampler must be local_markov or block", details={"resampler": resampler})
    n_boot = _n_boot(n_boot)
    h1, h2 = _resolve(path, h1, h2)
    if grid is None:
        low, high = truncation_region(path)
        z = np.linspace(low, high, grid_points())
    else:
        z = np.asarray(grid, dtype=np.float64).reshape(-1)
        if z.size < 3 or np.any(np.diff(z) <= 0):
            raise ValidationError("grid must be strictly ascending with >= 3 points")
    power = 2.0 if squared else 1.0
    gap, weights = _markov_gap(path, h1, h2, z)
    statistic = _markov_statistic(gap, weights, z, power)

    def replicate(replicate_seed: int) -> float:
        generator = rng.stream(replicate_seed, rng.RESAMPLING)
        if resampler == "block":
            # block replicates keep the data's own gap, so they are centred at the observed one
            sample_gap, sample_weights = _markov_gap(block_resample(path, generator), h1, h2, z)
            return _markov_statistic(sample_gap - gap, sample_weights, z, power)
        sample_gap, sample_weights = _markov_gap(local_markov_resample(path, h1, generator), h1, h2, z)
        return _markov_statistic(sample_gap, sample_weights, z, power)

    diagnostics = {
        "h1": h1,
        "h2": h2,
        "grid": [float(z[0]), float(z[-1]), int(z.size)],
        "norm": "squared" if squared else "absolute",
        "resampler": resampler,
    }
    return bootstrap_test("markov", statistic, replicate, n_boot, seed, diagnostics)


# ---------------------------------------------------------------------------
# Invariant density test
# ---------------------------------------------------------------------------

def _invariant_statistic(
    path: SamplePath, family: Family, h: float, grid: FloatArray
) -> tuple[float, FitResult]:
    fit = fit_exact_mle(path, family)
    model = model_from_vector(family, fit.estimates)
    estimate = kernel_density(path.values, KernelSpec(KernelShape.GAUSSIAN, h), grid)
    reference = np.asarray(invariant_density(model, grid), dtype=np.float64)
    return float(integrate.trapezoid((estimate.value - reference) ** 2, grid)), fit


"""
GOAL: Integrated squared distance between the kernel and the fitted invariant density.

PARAMETERS:
  path: SamplePath - Stationary-looking observations
  family: Family | str - vasicek or cir
  h: Optional[float] - Gaussian-kernel bandwidth (default: reference rule)
  truncation: Optional[tuple[float, float]] - Integration interval (default 5%-95% quantiles)
  n_boot, seed - Bootstrap settings

RETURNS:
  TestResult - test "invariant_density"; parametric bootstrap from stationary exact paths
    under the exact-MLE fit (started at the first observation when a stationary start is unavailable)

RAISES:
  UnsupportedModelError: GBM or families without closed-form transitions
"""
def invariant_density_test(
    path: SamplePath,
    family: Family | str,
    h: Optional[float] = None,
    truncation: Optional[tuple[float, float]] = None,
    n_boot: Optional[int] = None,
    seed: int = 0,
) -> TestResult:
    family = _closed_form_family(family)
    if family is Family.GBM:
        raise UnsupportedModelError("gbm has no invariant density")
    n_boot = _n_boot(n_boot)
    h = silverman_bandwidth(path.values, KernelShape.GAUSSIAN) if h is None else float(h)
    region = truncation_region(path) if truncation is None else tuple(truncation)
    grid = np.linspace(region[0], region[1], grid_points())
    statistic, fit = _invariant_statistic(path, family, h, grid)
    model = model_from_vector(family, fit.estimates)
    stationary = model.is_stationary and not (family is Family.CIR and not model.is_feller)

    def replicate(replicate_seed: int) -> float:
        value, _ = _invariant_statistic(_null_path(model, path, replicate_seed, stationary), family, h, grid)
        return value

    diagnostics = {
        "family": family.value,
        "estimates": fit.as_dict(),
        "h": h,
        "truncation": list(region),
        "stationary_start": stationary,
    }
    return bootstrap_test("invariant_density", statistic, replicate, n_boot, seed, diagnostics)


# ---------------------------------------------------------------------------
# Minimum distance estimation
# ---------------------------------------------------------------------------

"""
GOAL: Minimize the weighted L2 distance between a distribution surface and the family's CDF.

PARAMETERS:
  target: DensitySurface - kind "cdf"
  family: Family | str - gbm, vasicek or cir
  start: Sequence[float] - Initial parameters
  x_weights: Optional[array] - Weight per x-grid node (default uniform)
  n_obs: int - Transitions behind the target (reported only)

RETURNS:
  FitResult - method "minimum_distance"; objective = minimal distance; stderr NaN

RAISES:
  ValidationError: target is not a distribution surface
"""
def minimize_cdf_distance(
    target: DensitySurface,
    family: Family | str,
    start: Sequence[float],
    x_weights: Optional[FloatArray] = None,
    n_obs: int = 0,
) -> FitResult:
    family = _closed_form_family(family)
    if target.kind != "cdf":
        raise ValidationError("minimum distance needs a distribution surface", details={"kind": target.kind})

    def objective(theta: FloatArray) -> float:
        model = model_from_vector(family, theta)
        reference = parametric_surface(model, target.delta, target.x_grid, target.y_grid, target.truncation, kind="cdf")
        return surface_distance(target, reference, x_weights)

    optimum = minimize_objective(objective, np.asarray(start, dtype=np.float64), bounds(family))
    diagnostics = {"message": optimum.message, "penalized_evaluations": optimum.penalized, "start": list(start)}
    return FitResult(
        family=family.value,
        method="minimum_distance",
        parameter_names=list(parameter_names(family)),
        estimates=[float(v) for v in optimum.theta],
        stderr=[math.nan] * len(optimum.theta),
        objective=optimum.value,
        n_obs=n_obs,
        converged=optimum.converged,
        diagnostics=diagnostics,
    )


def _minimum_distance_once(
    path: SamplePath, family: Family, h1: float, h2: float, region: tuple[float, float], start: Sequence[float]
) -> FitResult:
    x_grid = np.linspace(region[0], region[1], grid_points())
    surface = estimate_transition_distribution(
        estimate_transition_density(path, h1, h2, x_grid=x_grid, truncation=region)
    )
    x, _ = increments(path, 1)
    return minimize_cdf_distance(surface, family, start, empirical_x_weights(x, x_grid, region), n_obs=int(x.size))


def _bootstrap_estimates(
    fit: FitResult, path: SamplePath, family: Family, h1: float, h2: float, region: tuple[float, float],
    n_boot: int, seed: int,
) -> FloatArray:
    model = model_from_vector(family, fit.estimates)

    def replicate(replicate_seed: int) -> FloatArray:
        try:
            sample = _null_path(model, path, replicate_seed)
            return np.asarray(_minimum_distance_once(sample, family, h1, h2, region, fit.estimates).estimates)
        except DiffLabError as exc:
            logger.debug("minimum distance: replicate failed: %s", exc.message)
            return np.full(len(fit.estimates), np.nan)

    draws = np.vstack(parallel_map(replicate, rng.spawn_seeds(seed, n_boot)))
    return draws[np.all(np.isfinite(draws), axis=1)]


"""
GOAL: Minimum-distance estimate min_theta ||P_hat - P_theta|| on the truncation region.

PARAMETERS:
  path: SamplePath - Observations
  family: Family | str - gbm, vasicek or cir
  h1, h2: Optional[float] - Bandwidths (default: reference rule)
  truncation: Optional[tuple[float, float]] - State interval (default 5%-95% quantiles)
  n_boot: int - Parametric-bootstrap replicates for standard errors (0 = no stderr)
  seed: int - Root seed
  bandwidth_factors: Sequence[float] - Multipliers of (h1, h2) to sweep; with more than one,
    the pair with the smallest bootstrap relative variance wins (needs n_boot >= 2)

RETURNS:
  FitResult - method "minimum_distance"; stderr from the bootstrap, NaN without it

RAISES:
  UnsupportedModelError: families without a closed-form transition law
  ValidationError: a bandwidth sweep without bootstrap replicates
"""
def fit_minimum_distance(
    path: SamplePath,
    family: Family | str,
    h1: Optional[float] = None,
    h2: Optional[float] = None,
    truncation: Optional[tuple[float, float]] = None,
    n_boot: int = 0,
    seed: int = 0,
    bandwidth_factors: Sequence[float] = (1.0,),
) -> FitResult:
    family = _closed_form_family(family)
    factors = [float(f) for f in bandwidth_factors]
    if not factors or any(f <= 0 for f in factors):
        raise ValidationError("bandwidth factors must be positive", details={"factors": factors})
    if len(factors) > 1 and n_boot < 2:
        raise ValidationError("a bandwidth sweep needs n_boot >= 2")
    h1, h2 = _resolve(path, h1, h2)
    region = truncation_region(path) if truncation is None else tuple(truncation)
    start = fit_pseudo_mle(path, family).estimates

    candidates = []
    for factor in factors:
        fit = _minimum_distance_once(path, family, h1 * factor, h2 * factor, region, start)
        draws = (
            _bootstrap_estimates(fit, path, family, h1 * factor, h2 * factor, region, n_boot, seed)
            if n_boot
            else np.empty((0, len(start)))
        )
        if draws.shape[0] >= 2:
            stderr = draws.std(axis=0, ddof=1)
            score = float(np.sum((stderr / np.maximum(np.abs(fit.estimates), 1e-12)) ** 2))
        else:
            stderr, score = np.full(len(start), np.nan), math.nan
        candidates.append((factor, fit, stderr, score, int(draws.shape[0])))
        logger.info("minimum distance %s: factor %.3g objective %.3e score %.3e", family.value, factor, fit.objective, score)

    scored = [c for c in candidates if math.isfinite(c[3])]
    factor, fit, stderr, score, n_valid = min(scored, key=lambda c: c[3]) if scored else candidates[0]
    diagnostics = {
        **fit.diagnostics,
        "h1": h1 * factor,
        "h2": h2 * factor,
        "truncation": list(region),
        "n_boot": n_boot,
        "n_boot_valid": n_valid,
        "sweep": {repr(c[0]): c[3] for c in candidates} if len(candidates) > 1 else {},
    }
    return fit.model_copy(update={"stderr": [float(v) for v in stderr], "diagnostics": diagnostics})
