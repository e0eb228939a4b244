"""
Generalized likelihood ratio test of time-constant volatility coefficients.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import numpy.typing as npt

from apps.core import rng
from apps.core.conf import default_n_boot
from apps.core.dtos import TestResult
from apps.core.exceptions import DiffLabError, NumericalError, ValidationError
from apps.core.parallel import parallel_map
from apps.sde.paths import SamplePath
from apps.smoothing.curves import PointStatus
from apps.smoothing.kernels import KernelShape, KernelSpec
from apps.time_estimation.services import (
    Transitions,
    default_time_grid,
    evaluation_mask,
    fit_local_vol,
    fit_time_varying,
    gaussian_loglik,
)

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]

MAX_FAILED_SHARE = 0.1


@dataclass(frozen=True)
class ConstantFit:
    alpha0: float
    alpha1: float
    beta0: float
    beta1: float
    loglik: float


def _constant_fit(data: Transitions) -> ConstantFit:
    """OLS drift and global maximum likelihood (beta0, beta1) on the given transitions."""
    design = np.column_stack([np.ones_like(data.x), data.x])
    (alpha0, alpha1), *_ = np.linalg.lstsq(design, data.y, rcond=None)
    e = data.residuals(alpha0, alpha1)
    vol = fit_local_vol(np.ones_like(e), e * e, np.log(data.x))
    if vol.status != PointStatus.OK.value:
        raise NumericalError("constant volatility fit failed", details={"status": vol.status, "message": vol.message})
    loglik = gaussian_loglik(data, alpha0, alpha1, vol.beta0, vol.beta1)
    return ConstantFit(float(alpha0), float(alpha1), vol.beta0, vol.beta1, loglik)


def _statistic(path: SamplePath, kernel: KernelSpec, t_grid: FloatArray) -> tuple[float, ConstantFit]:
    fit = fit_time_varying(path, kernel, t_grid=t_grid)
    data = Transitions.of(path)
    constant = _constant_fit(data.subset(evaluation_mask(data, t_grid)))
    statistic = fit.loglik - constant.loglik
    if not math.isfinite(statistic):
        raise NumericalError("GLR statistic is not finite")
    return statistic, constant


def _null_path(path: SamplePath, fit: ConstantFit, residuals: FloatArray, seed: int) -> SamplePath:
    """Euler recursion under the constant fit driven by resampled standardized residuals."""
    generator = rng.stream(seed, rng.RESAMPLING)
    draws = generator.choice(residuals, size=path.n, replace=True)
    root = math.sqrt(path.delta)
    x = np.empty(path.n + 1)
    x[0] = path.values[0]
    for i in range(path.n):
        step = (fit.alpha0 + fit.alpha1 * x[i]) * path.delta + fit.beta0 * x[i] ** fit.beta1 * root * draws[i]
        # reflection keeps the replicate positive
        x[i + 1] = abs(x[i] + step) or x[i]
    return path.with_values(x)


"""
GOAL: Test H0: beta0(t) and beta1(t) constant in time against the time-varying CKLS model.

PARAMETERS:
  path: SamplePath - Positive observations - length >= 50
  h: float - One-sided time bandwidth - > 0
  n_boot: Optional[int] - Bootstrap replicates (default DIFFLAB_N_BOOT) - >= 1
  seed: int - Root seed for the bootstrap
  t_grid: Optional[array] - Fit times (default: first full window to last observation)

RETURNS:
  TestResult - test="glr_constancy"; statistic = loglik(time-varying) - loglik(constant)
    on the same transitions; bootstrap p-value (1 + #{T* >= T}) / (1 + valid replicates)

RAISES:
  ValidationError: non-positive path, bad h or n_boot
  NumericalError: the fit on the observed path fails

GUARANTEES:
  - Identical inputs give identical results, regardless of thread count
  - Failed replicates are excluded and counted; flagged when more than 10% fail
"""
def glr_test_constancy(
    path: SamplePath,
    h: float,
    n_boot: Optional[int] = None,
    seed: int = 0,
    t_grid: Optional[npt.ArrayLike] = None,
) -> TestResult:
    n_boot = default_n_boot() if n_boot is None else int(n_boot)
    if n_boot < 1 or not h > 0:
        raise ValidationError("n_boot must be >= 1 and h > 0", details={"n_boot": n_boot, "h": h})
    if not path.is_positive:
        raise ValidationError("the constancy test needs a positive path")
    kernel = KernelSpec(KernelShape.ONE_SIDED_EPANECHNIKOV, h)
    grid = default_time_grid(path, h) if t_grid is None else np.asarray(t_grid, dtype=np.float64)

    statistic, constant = _statistic(path, kernel, grid)
    data = Transitions.of(path)
    e = data.residuals(constant.alpha0, constant.alpha1)
    standardized = e / (constant.beta0 * np.power(data.x, constant.beta1))
    standardized = (standardized - standardized.mean()) / standardized.std()

    def replicate(replicate_seed: int) -> float:
        try:
            value, _ = _statistic(_null_path(path, constant, standardized, replicate_seed), kernel, grid)
            return value
        except DiffLabError as exc:
            logger.debug("glr_test_constancy: replicate failed: %s", exc.message)
            return math.nan

    draws = np.array(parallel_map(replicate, rng.spawn_seeds(seed, n_boot)))
    valid = draws[np.isfinite(draws)]
    n_failed = int(n_boot - valid.size)
    flagged = n_failed > MAX_FAILED_SHARE * n_boot
    if flagged:
        logger.warning("glr_test_constancy: %d of %d bootstrap replicates failed", n_failed, n_boot)
    p_value = float((1 + np.sum(valid >= statistic)) / (1 + valid.size))
    logger.info("glr_test_constancy: T=%.4f p=%.4f (h=%.4g, %d replicates)", statistic, p_value, h, valid.size)
    return TestResult(
        test="glr_constancy",
        statistic=statistic,
        p_value=p_value,
        n_boot=n_boot,
        n_failed=n_failed,
        flagged=flagged,
        diagnostics={
            "h": h,
            "constant_fit": {
                "alpha0": constant.alpha0,
                "alpha1": constant.alpha1,
                "beta0": constant.beta0,
                "beta1": constant.beta1,
            },
            "n_grid": int(grid.size),
        },
    )
