"""
Experiment runner behind `manage.py difflab`.

run() materializes the seed, executes one pipeline, writes its artifacts
into <output_dir>/<command>-<seed>/ and always finishes with a manifest.
"""

from __future__ import annotations

import logging
import math
from datetime import datetime, timezone
from importlib import metadata
from typing import Any, Callable, Optional

import numpy as np

import apps
from apps.core import rng
from apps.core.monitoring import add_breadcrumb, capture_exception, capture_message, run_scope
from apps.core.dtos import FitResult, RunManifest, TestResult
from apps.core.exceptions import DiffLabError, ValidationError
from apps.core.schemas import RunConfig
from apps.derivatives.positions import Position, PositionKind, QuoteSet
from apps.derivatives.pricing import bs_price, bs_put, mc_price
from apps.derivatives.spd import spd_from_calls, spd_semiparametric
from apps.experiments.artifacts import RunDirectory, path_frame, surface_frame
from apps.experiments.ingest import ingest_options, ingest_series
from apps.inference import parametric, specification
from apps.inference.transition import estimate_transition_density
from apps.sde.catalog import Family, ModelSpec
from apps.sde.paths import SamplePath
from apps.simulation.plans import Scheme, SimPlan
from apps.simulation.services import compare_schemes, simulate
from apps.smoothing.bandwidth import silverman_bandwidth
from apps.smoothing.kernels import KernelShape, KernelSpec
from apps.smoothing.services import default_grid
from apps.state_estimation import services as state
from apps.time_estimation import services as timedomain
from apps.time_estimation.testing import glr_test_constancy

logger = logging.getLogger(__name__)

TIME_BANDWIDTH_SHARE = 0.1
PACKAGES = ("django", "numpy", "scipy", "pandas", "statsmodels", "pydantic")

# Chapman-Pearson short-rate fit for cir; round illustrative values elsewhere
DEFAULT_PARAMS: dict[str, dict[str, float]] = {
    "gbm": {"mu": 0.05, "sigma": 0.2},
    "vasicek": {"kappa": 0.5, "alpha": 0.06, "sigma": 0.02},
    "cir": {"kappa": 0.21459, "alpha": 0.08571, "sigma": 0.07830},
    "ckls": {"kappa": 0.2, "alpha": 0.08, "sigma": 0.1, "gamma": 0.75},
}

Pipeline = Callable[[RunConfig, RunDirectory], None]


def package_versions() -> dict[str, str]:
    versions = {"difflab": apps.__version__}
    for name in PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "unknown"
    return versions


def build_model(config: RunConfig) -> ModelSpec:
    params = dict(config.params) if config.params else DEFAULT_PARAMS[config.family]
    return ModelSpec.from_parameters(config.family, params)


def _series(config: RunConfig) -> SamplePath:
    assert config.input is not None
    return ingest_series(config.input, config.calendar, config.allow_gaps)


def _state_kernel(config: RunConfig, path: SamplePath) -> KernelSpec:
    shape = KernelShape(config.kernel)
    if shape is KernelShape.ONE_SIDED_EPANECHNIKOV:
        raise ValidationError("state-domain estimators need a symmetric kernel", details={"kernel": config.kernel})
    h = config.h if config.h is not None else silverman_bandwidth(path.values, shape)
    return KernelSpec(shape, h)


def _time_kernel(config: RunConfig, path: SamplePath) -> KernelSpec:
    h = config.h if config.h is not None else TIME_BANDWIDTH_SHARE * float(path.times[-1] - path.times[0])
    return KernelSpec(KernelShape.ONE_SIDED_EPANECHNIKOV, h)


def _state_grid(config: RunConfig, path: SamplePath) -> Optional[np.ndarray]:
    return None if config.grid_points is None else default_grid(path.values, config.grid_points)


# ---------------------------------------------------------------------------
# Pipelines
# ---------------------------------------------------------------------------

def run_simulate(config: RunConfig, out: RunDirectory) -> None:
    plan = SimPlan(
        build_model(config),
        config.x0,
        delta=config.delta,
        n_steps=config.n_steps,
        substeps=config.substeps,
        seed=out.seed,
        scheme=Scheme(config.scheme),
    )
    path = simulate(plan)
    out.table("path", path_frame(path))
    if config.compare_schemes:
        other = Scheme.ORDER_ONE if plan.scheme is not Scheme.ORDER_ONE else Scheme.EULER
        out.json("scheme_comparison", {"scheme": plan.scheme.value, "other": other.value, **compare_schemes(plan, other)})


def run_estimate(config: RunConfig, out: RunDirectory) -> None:
    path = _series(config)
    method = config.method
    if method == "transition-density":
        surface = estimate_transition_density(path, h1=config.h, h2=config.h2, truncation=config.truncation)
        out.table("transition_density", surface_frame(surface))
        out.json(
            "transition_density_summary",
            {"bandwidths": surface.bandwidths, "truncation": surface.truncation, "delta": surface.delta},
        )
        return
    if method in {"time-varying", "semiparametric"}:
        kernel = _time_kernel(config, path)
        fit = (
            timedomain.fit_time_varying(path, kernel, h_vol=config.h2)
            if method == "time-varying"
            else timedomain.fit_semiparametric(path, kernel)
        )
        for name in ("alpha0", "alpha1", "beta0", "beta1"):
            out.curve(name, getattr(fit, name))
        out.json("time_fit", {"bandwidths": fit.bandwidths, "loglik": fit.loglik, "diagnostics": fit.diagnostics})
        return

    kernel = _state_kernel(config, path)
    grid = _state_grid(config, path)
    if method == "stanton":
        drift, vol2 = state.estimate_stanton(path, kernel, grid)
    elif method == "fan-yao":
        drift, vol2 = state.estimate_fan_yao(path, kernel, h_vol=config.h2, grid=grid)
    elif method == "order-k":
        drift, vol2 = state.estimate_order_k(path, config.k, kernel, grid, config.allow_high_order)
    else:
        vol2 = state.estimate_vol_fixed_delta(path, kernel, grid)
        drift = state.drift_from_density(vol2.interpolate, path, kernel, vol2.grid) if method == "invariant-density" else None
    if drift is not None:
        out.curve("drift", drift)
    out.curve("vol2", vol2)


def run_test(config: RunConfig, out: RunDirectory) -> None:
    path = _series(config)
    kind = config.test_kind
    common = {"n_boot": config.n_boot, "seed": out.seed}
    result: TestResult
    if kind == "glr-transition":
        result = specification.glr_transition_test(
            path, config.family, h1=config.h, h2=config.h2, truncation=config.truncation, **common
        )
    elif kind == "distance":
        result = specification.distance_test(
            path, config.family, norm=config.norm, h1=config.h, h2=config.h2, truncation=config.truncation, **common
        )
    elif kind == "markov":
        result = specification.markov_test(path, h1=config.h, h2=config.h2, resampler=config.resampler, **common)
    elif kind == "invariant-density":
        result = specification.invariant_density_test(path, config.family, h=config.h, truncation=config.truncation, **common)
    else:
        result = glr_test_constancy(path, _time_kernel(config, path).bandwidth, **common)
    if result.flagged:
        capture_message(f"{result.test}: {result.n_failed} bootstrap replicates failed", level="warning", tags={"command": "test"})
    out.json("test_result", result.model_dump())


def run_calibrate(config: RunConfig, out: RunDirectory) -> None:
    path = _series(config)
    method = config.method
    fit: FitResult
    if method == "pseudo-mle":
        fit = parametric.fit_pseudo_mle(path, config.family)
    elif method == "exact-mle":
        fit = parametric.fit_exact_mle(path, config.family)
    elif method == "gmm":
        fit = parametric.fit_gmm(path, config.family, config.a_values, two_step=config.two_step)
    elif method == "indirect":
        fit = parametric.fit_indirect(path, config.family, n_sim=config.n_sim, theta_grid=config.theta_grid or None, seed=out.seed)
    else:
        fit = specification.fit_minimum_distance(
            path, config.family, h1=config.h, h2=config.h2, truncation=config.truncation, n_boot=config.n_boot or 0, seed=out.seed
        )
    out.json("fit", fit.model_dump())


def portfolio_of(config: RunConfig) -> list[Position]:
    if config.portfolio:
        return [
            Position.cash(leg.amount) if leg.kind == "cash" else Position(PositionKind(leg.kind), leg.quantity, leg.strike)
            for leg in config.portfolio
        ]
    assert config.strike is not None
    return [Position.call(config.strike)]


def analytic_gbm_price(portfolio: list[Position], config: RunConfig, sigma: float) -> float:
    """Sum of Black-Scholes leg prices; cash legs discounted."""
    S, T, r, q = config.spot, config.maturity, config.rate, config.dividend_yield
    total = 0.0
    for leg in portfolio:
        if leg.kind is PositionKind.CASH:
            total += leg.quantity * leg.cash_amount * math.exp(-r * T)
        elif leg.kind is PositionKind.CALL:
            total += leg.quantity * float(bs_price(S, leg.strike, T, r, sigma, q))
        else:
            total += leg.quantity * float(bs_put(S, leg.strike, T, r, sigma, q))
    return total


def run_price(config: RunConfig, out: RunDirectory) -> None:
    model = build_model(config)
    portfolio = portfolio_of(config)
    price, stderr = mc_price(
        model,
        portfolio,
        config.rate,
        config.maturity,
        config.n_paths,
        config.steps,
        out.seed,
        x0=config.spot,
        delta_yield=config.dividend_yield,
    )
    payload: dict[str, Any] = {"mc_price": price, "mc_stderr": stderr, "n_paths": config.n_paths}
    if model.family is Family.GBM:
        payload["black_scholes"] = analytic_gbm_price(portfolio, config, model.params["sigma"])
    out.json("price", payload)


def run_spd(config: RunConfig, out: RunDirectory) -> None:
    assert config.input is not None
    quotes: QuoteSet = ingest_options(config.input)
    single_curve = np.ptp(quotes.maturity) == 0 and np.ptp(quotes.spot) == 0
    if single_curve:
        order = np.argsort(quotes.strike)
        T = float(quotes.maturity[0])
        estimate = spd_from_calls(
            quotes.strike[order], quotes.price[order], config.rate, T,
            h=config.h, exact_grid=config.exact_grid, renormalize=config.renormalize,
        )
    else:
        estimate = spd_semiparametric(
            quotes,
            config.target_spot or float(np.median(quotes.spot)),
            config.target_maturity or float(np.median(quotes.maturity)),
            config.rate,
            config.dividend_yield,
            h_moneyness=config.h_moneyness,
            h_maturity=config.h_maturity,
            renormalize=config.renormalize,
        )
    out.curve("spd", estimate.curve)
    out.json(
        "spd_summary",
        {
            "mass": estimate.mass,
            "pre_clip_mass": estimate.pre_clip_mass,
            "clipped_points": estimate.clipped_points,
            "renormalized": estimate.renormalized,
            "flagged_quotes": quotes.flagged,
            "method": estimate.curve.diagnostics.get("method"),
        },
    )


PIPELINES: dict[str, Pipeline] = {
    "simulate": run_simulate,
    "estimate": run_estimate,
    "test": run_test,
    "calibrate": run_calibrate,
    "price": run_price,
    "spd": run_spd,
}


"""
GOAL: Execute one CLI command and record it in a manifest.

PARAMETERS:
  config: RunConfig - Validated configuration; seed may be None

RETURNS:
  RunManifest - status succeeded or failed; echoes the resolved config and seed

RAISES:
  Nothing for difflab errors: they are recorded in the manifest (status failed,
  error payload with code) and partial artifacts are removed. Unexpected
  exceptions propagate after the failed manifest is written.

GUARANTEES:
  - The seed is always materialized and recorded
  - manifest.json is written last, atomically
  - Re-running from manifest["config"] reproduces the artifacts
"""
def run(config: RunConfig) -> RunManifest:
    seed = config.seed if config.seed is not None else rng.fresh_seed()
    resolved = config.model_copy(update={"seed": seed})
    out = RunDirectory(resolved.output_dir, resolved.command, seed, resolved.output_format)
    out.clear()
    started = datetime.now(timezone.utc)
    logger.info("difflab %s: seed=%d output=%s", resolved.command, seed, out.path)

    status, error = "succeeded", None
    unexpected: Optional[BaseException] = None
    with run_scope(resolved.command, seed, resolved.model_dump(mode="json")):
        add_breadcrumb(f"difflab {resolved.command} started", category="run", data={"seed": seed})
        try:
            PIPELINES[resolved.command](resolved, out)
        except DiffLabError as exc:
            logger.error("difflab %s failed: %s (%s)", resolved.command, exc.message, exc.error_code)
            exc.capture_to_sentry(tags={"command": resolved.command})
            status, error = "failed", {**exc.to_dict(), "exit_code": exc.exit_code}
        except Exception as exc:
            logger.exception("difflab %s crashed", resolved.command)
            capture_exception(exc, tags={"command": resolved.command})
            status, error = "failed", {"error_code": "INTERNAL_ERROR", "message": str(exc), "details": {}, "exit_code": 1}
            unexpected = exc
    if status == "failed":
        out.discard()

    manifest = RunManifest(
        command=resolved.command,
        seed=seed,
        status=status,
        config=resolved.model_dump(mode="json"),
        versions=package_versions(),
        artifacts=list(out.artifacts),
        started_at=started,
        finished_at=datetime.now(timezone.utc),
        error=error,
    )
    out.write_manifest(manifest.model_dump(mode="json"))
    if unexpected is not None:
        raise unexpected
    return manifest
