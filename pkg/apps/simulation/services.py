"""
Trajectory generation: Euler, strong order-one, derivative-free and exact samplers.

Integration is vectorized across trajectories and sequential in time. The
observed path keeps every M-th integration point.
"""

from __future__ import annotations

import functools
import logging
import math
from typing import Callable

import numpy as np
from scipy import integrate

from apps.core.exceptions import NumericalError, UnsupportedModelError
from apps.core.parallel import chunked, parallel_map
from apps.sde.catalog import Family, FloatArray, ModelSpec
from apps.sde.paths import SamplePath
from apps.sde.services import cir_constants, invariant_density, quadrature_support
from apps.simulation.plans import Scheme, SimPlan
from apps.simulation.shocks import ShockStream, coarse_normals

logger = logging.getLogger(__name__)

BLOCK_PATHS = 256
INVERSE_CDF_POINTS = 2001

StepFn = Callable[[ModelSpec, float, FloatArray, float, FloatArray], FloatArray]


# ---------------------------------------------------------------------------
# One-step maps, vectorized over trajectories
# ---------------------------------------------------------------------------

def _euler_step(model: ModelSpec, t: float, x: FloatArray, dt: float, z: FloatArray) -> FloatArray:
    return x + model.drift(t, x) * dt + model.diffusion(t, x) * math.sqrt(dt) * z


def _order_one_step(model: ModelSpec, t: float, x: FloatArray, dt: float, z: FloatArray) -> FloatArray:
    correction = 0.5 * model.diffusion_product(t, x) * dt * (z * z - 1.0)
    return _euler_step(model, t, x, dt, z) + correction


def _derivative_free_step(model: ModelSpec, t: float, x: FloatArray, dt: float, z: FloatArray) -> FloatArray:
    root = math.sqrt(dt)
    drift = model.drift(t, x)
    sigma = model.diffusion(t, x)
    support = x + drift * dt + sigma * root
    if model.positive_domain:
        support = np.abs(support)
    correction = 0.5 * (model.diffusion(t, support) - sigma) * (z * z - 1.0) * root
    return x + drift * dt + sigma * root * z + correction


STEP_FUNCTIONS: dict[Scheme, StepFn] = {
    Scheme.EULER: _euler_step,
    Scheme.ORDER_ONE: _order_one_step,
    Scheme.DERIVATIVE_FREE: _derivative_free_step,
}


# ---------------------------------------------------------------------------
# Initial states
# ---------------------------------------------------------------------------

@functools.lru_cache(maxsize=16)
def _inverse_cdf_table(model: ModelSpec) -> tuple[FloatArray, FloatArray]:
    if model.family is not Family.CKLS and not all(math.isfinite(b) for b in model.support):
        raise UnsupportedModelError(
            "stationary start of a generic model needs a finite support",
            details={"support": list(model.support)},
        )
    lower, upper = quadrature_support(model, None)
    grid = np.linspace(lower, upper, INVERSE_CDF_POINTS)
    density = np.asarray(invariant_density(model, grid, support=(lower, upper)))
    cdf = integrate.cumulative_trapezoid(density, grid, initial=0.0)
    cdf /= cdf[-1]
    keep = np.concatenate([[True], np.diff(cdf) > 0])
    return cdf[keep], grid[keep]


def _inverse_cdf_sample(model: ModelSpec, u: float) -> float:
    cdf, grid = _inverse_cdf_table(model)
    return float(np.interp(u, cdf, grid))


def initial_state(plan: SimPlan, path_id: int) -> float:
    """x0 of the plan, or one draw from the invariant law on the path's INITIAL_STATE stream."""
    if not plan.stationary_start:
        return float(plan.x0)
    model = plan.model
    gen = ShockStream(plan.seed, path_id).initial_state()
    p = model.params
    if model.family is Family.VASICEK:
        return float(p["alpha"] + p["sigma"] / math.sqrt(2.0 * p["kappa"]) * gen.standard_normal())
    if model.family is Family.CIR:
        return float(gen.gamma(model.feller_index + 1.0, p["sigma"] ** 2 / (2.0 * p["kappa"])))
    return _inverse_cdf_sample(model, float(gen.random()))


# ---------------------------------------------------------------------------
# Integration
# ---------------------------------------------------------------------------

def _integrate(
    plan: SimPlan, x0: FloatArray, shocks: FloatArray, origin_time: float = 0.0
) -> tuple[FloatArray, int]:
    """Discretized paths [path, step] from shocks [path, step, substep]; returns (values, reflections)."""
    model = plan.model
    step_fn = STEP_FUNCTIONS[plan.scheme]
    dt = plan.step
    n_paths = x0.size
    values = np.empty((n_paths, plan.n_steps + 1), dtype=np.float64)
    values[:, 0] = x0
    x = x0.astype(np.float64, copy=True)
    reflections = 0
    for k in range(plan.n_steps):
        for m in range(plan.substeps):
            t = origin_time + (k * plan.substeps + m) * dt
            x = step_fn(model, t, x, dt, shocks[:, k, m])
            if model.positive_domain:
                breached = x <= 0
                if breached.any():
                    reflections += int(breached.sum())
                    x = np.abs(x)
        if not np.all(np.isfinite(x)):
            raise NumericalError(
                "simulated path left the representable range",
                details={"step": k, "scheme": plan.scheme.value, "family": model.family.value},
            )
        values[:, k + 1] = x
    return values, reflections


def _exact_closed(plan: SimPlan, x0: FloatArray, shocks: FloatArray) -> FloatArray:
    model = plan.model
    p = model.params
    z = coarse_normals(shocks)
    values = np.empty((x0.size, plan.n_steps + 1), dtype=np.float64)
    values[:, 0] = x0
    if model.family is Family.GBM:
        mu = model.risk_free_rate if model.risk_free_rate is not None else p["mu"]
        log_steps = (mu - 0.5 * p["sigma"] ** 2) * plan.delta + p["sigma"] * math.sqrt(plan.delta) * z
        values[:, 1:] = x0[:, None] * np.exp(np.cumsum(log_steps, axis=1))
        return values
    rho = math.exp(-p["kappa"] * plan.delta)
    sd = p["sigma"] * math.sqrt((1.0 - rho * rho) / (2.0 * p["kappa"]))
    x = x0.copy()
    for k in range(plan.n_steps):
        x = p["alpha"] + (x - p["alpha"]) * rho + sd * z[:, k]
        values[:, k + 1] = x
    return values


def _exact_cir(plan: SimPlan, x0: float, path_id: int) -> FloatArray:
    """Poisson-mixed Gamma composition: X = Gamma(q + 1 + N) / c with N ~ Poisson(u)."""
    model = plan.model
    gen = ShockStream(plan.seed, path_id).exact_transitions()
    c, _, _ = cir_constants(model, plan.delta, 1.0)
    rho = math.exp(-model.params["kappa"] * plan.delta)
    shape = model.feller_index + 1.0
    values = np.empty(plan.n_steps + 1, dtype=np.float64)
    values[0] = x = x0
    for k in range(plan.n_steps):
        n = gen.poisson(c * x * rho)
        x = gen.gamma(shape + n) / c
        values[k + 1] = x
    return values


def _simulate_block(plan: SimPlan, path_ids: range) -> tuple[FloatArray, int]:
    x0 = np.array([initial_state(plan, i) for i in path_ids], dtype=np.float64)
    if plan.scheme is Scheme.EXACT and plan.model.family is Family.CIR:
        return np.vstack([_exact_cir(plan, float(x0[j]), i) for j, i in enumerate(path_ids)]), 0
    shocks = np.stack([ShockStream(plan.seed, i).normals(plan.n_steps, plan.substeps) for i in path_ids])
    if plan.scheme is Scheme.EXACT:
        return _exact_closed(plan, x0, shocks), 0
    return _integrate(plan, x0, shocks)


def _to_path(plan: SimPlan, values: FloatArray, reflections: int, path_id: int) -> SamplePath:
    if reflections:
        logger.warning(
            "%s %s path %d reflected at zero %d times", plan.model.family.value, plan.scheme.value, path_id, reflections
        )
    return SamplePath(
        plan.delta,
        values,
        diagnostics={
            "scheme": plan.scheme.value,
            "seed": plan.seed,
            "path_id": path_id,
            "substeps": plan.substeps,
            "reflections": reflections,
        },
    )


"""
GOAL: Simulate one trajectory with the plan's scheme.

PARAMETERS:
  plan: SimPlan - Model, start, grid, seed and scheme
  path_id: int - Trajectory index selecting the random streams - >= 0

RETURNS:
  SamplePath - n_steps + 1 observations at spacing plan.delta

RAISES:
  NumericalError: the discretized path became non-finite
  UnsupportedModelError: stationary start for a model without a usable invariant law

GUARANTEES:
  - Equal (plan, path_id) give bit-identical values
  - Euler, order-one and derivative-free paths share the shock stream
  - Positivity breaches are reflected (x <- |x|) and counted in diagnostics["reflections"]
"""
def simulate(plan: SimPlan, path_id: int = 0) -> SamplePath:
    values, reflections = _simulate_block(plan, range(path_id, path_id + 1))
    return _to_path(plan, values[0], reflections, path_id)


def _with_scheme(plan: SimPlan, scheme: Scheme) -> SimPlan:
    if plan.scheme is scheme:
        return plan
    return SimPlan(plan.model, plan.x0, plan.delta, plan.n_steps, plan.substeps, plan.seed, scheme)


def simulate_euler(plan: SimPlan, path_id: int = 0) -> SamplePath:
    return simulate(_with_scheme(plan, Scheme.EULER), path_id)


def simulate_order_one(plan: SimPlan, path_id: int = 0) -> SamplePath:
    """Euler plus 0.5 sigma sigma_x dt (z^2 - 1) on the Euler shock stream."""
    return simulate(_with_scheme(plan, Scheme.ORDER_ONE), path_id)


def simulate_derivative_free(plan: SimPlan, path_id: int = 0) -> SamplePath:
    return simulate(_with_scheme(plan, Scheme.DERIVATIVE_FREE), path_id)


def simulate_exact(plan: SimPlan, path_id: int = 0) -> SamplePath:
    """Exact transition-law sampling for GBM, Vasicek and CIR."""
    return simulate(_with_scheme(plan, Scheme.EXACT), path_id)


"""
GOAL: Simulate many independent trajectories in parallel.

PARAMETERS:
  plan: SimPlan - Shared plan
  n_paths: int - Number of trajectories - >= 1
  max_workers: Optional[int] - Thread cap override

RETURNS:
  FloatArray - shape (n_paths, n_steps + 1); row i equals simulate(plan, i).values

GUARANTEES:
  - Output does not depend on the number of threads
"""
def simulate_many(plan: SimPlan, n_paths: int, max_workers: int | None = None) -> FloatArray:
    blocks = chunked(n_paths, BLOCK_PATHS)
    results = parallel_map(
        lambda s: _simulate_block(plan, range(s.start, s.stop)), blocks, max_workers=max_workers
    )
    reflections = sum(r for _, r in results)
    if reflections:
        logger.warning("%d reflections at zero across %d %s paths", reflections, n_paths, plan.scheme.value)
    logger.info("simulated %d %s paths of %d steps", n_paths, plan.scheme.value, plan.n_steps)
    return np.vstack([values for values, _ in results])


def compare_schemes(plan: SimPlan, other: Scheme = Scheme.ORDER_ONE, path_id: int = 0) -> dict[str, float]:
    """Sup-norm gap between the plan's path and the same-shock path of another scheme."""
    base = simulate(plan, path_id)
    alt = simulate(_with_scheme(plan, other), path_id)
    gap = float(np.max(np.abs(base.values - alt.values)))
    mean = float(np.mean(base.values))
    return {"sup_norm": gap, "path_mean": mean, "relative": gap / abs(mean) if mean else math.inf}
