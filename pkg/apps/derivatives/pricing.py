"""
Black-Scholes pricing, implied volatility and Monte Carlo risk-neutral pricing.

Calls are priced in forward form so a dividend yield enters only through
F = S exp((r - delta) T); puts come from put-call parity.
"""

from __future__ import annotations

import logging
import math
from typing import Optional, Sequence

import numpy as np
import numpy.typing as npt
from scipy import optimize, stats

from apps.core.exceptions import ArbitrageViolationError, DiffLabError, NumericalError, ValidationError
from apps.core.parallel import parallel_map
from apps.derivatives.positions import OptionQuote, Position, QuoteSet, call_bounds, payoff
from apps.sde.catalog import Family, ModelSpec
from apps.simulation.plans import Scheme, SimPlan
from apps.simulation.services import simulate_many

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]

SIGMA_FLOOR = 1e-12
SIGMA_CEILING = 1e3
PRICE_TOLERANCE = 1e-10
NEWTON_STEPS = 8
VEGA_FLOOR = 1e-14


def _scalar(value: FloatArray, *inputs: npt.ArrayLike) -> FloatArray | float:
    return float(value) if all(np.ndim(v) == 0 for v in inputs) else value


"""
GOAL: Black-Scholes price of a European call with a continuous dividend yield.

PARAMETERS:
  S: float | array - Spot - > 0
  K: float | array - Strike - >= 0
  T: float | array - Maturity in years - > 0
  r: float - Risk-free rate
  sigma: float | array - Volatility - >= 0
  delta_yield: float - Dividend yield

RETURNS:
  float | FloatArray - exp(-rT) [F N(d1) - K N(d2)], broadcast over inputs

GUARANTEES:
  - sigma = 0 gives the intrinsic forward value max(S e^{-delta T} - K e^{-rT}, 0)
  - K = 0 gives S e^{-delta T}
  - Result lies inside call_bounds
"""
def bs_price(
    S: npt.ArrayLike,
    K: npt.ArrayLike,
    T: npt.ArrayLike,
    r: float,
    sigma: npt.ArrayLike,
    delta_yield: float = 0.0,
) -> FloatArray | float:
    s, k, t, vol = np.broadcast_arrays(*(np.asarray(v, dtype=np.float64) for v in (S, K, T, sigma)))
    discount = np.exp(-r * t)
    forward = s * np.exp((r - delta_yield) * t)
    intrinsic = discount * np.maximum(forward - k, 0.0)
    spread = vol * np.sqrt(t)
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = (np.log(forward / k) + 0.5 * spread * spread) / spread
        d2 = d1 - spread
        price = discount * (forward * stats.norm.cdf(d1) - k * stats.norm.cdf(d2))
    price = np.where(k <= 0, discount * forward, np.where(spread <= 0, intrinsic, price))
    return _scalar(np.clip(price, intrinsic, discount * forward), S, K, T, sigma)


def bs_put(
    S: npt.ArrayLike,
    K: npt.ArrayLike,
    T: npt.ArrayLike,
    r: float,
    sigma: npt.ArrayLike,
    delta_yield: float = 0.0,
) -> FloatArray | float:
    """Put price by parity: C - S e^{-delta T} + K e^{-rT}."""
    call = np.asarray(bs_price(S, K, T, r, sigma, delta_yield))
    t = np.asarray(T, dtype=np.float64)
    put = call - np.asarray(S) * np.exp(-delta_yield * t) + np.asarray(K) * np.exp(-r * t)
    return _scalar(put, S, K, T, sigma)


def bs_vega(
    S: npt.ArrayLike,
    K: npt.ArrayLike,
    T: npt.ArrayLike,
    r: float,
    sigma: npt.ArrayLike,
    delta_yield: float = 0.0,
) -> FloatArray | float:
    s, k, t, vol = np.broadcast_arrays(*(np.asarray(v, dtype=np.float64) for v in (S, K, T, sigma)))
    forward = s * np.exp((r - delta_yield) * t)
    spread = vol * np.sqrt(t)
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = (np.log(forward / k) + 0.5 * spread * spread) / spread
        vega = s * np.exp(-delta_yield * t) * stats.norm.pdf(d1) * np.sqrt(t)
    return _scalar(np.where(spread > 0, vega, 0.0), S, K, T, sigma)


def _bracket(objective, low: float = 1e-3, high: float = 1.0) -> tuple[float, float]:
    while objective(low) > 0 and low > SIGMA_FLOOR:
        low *= 0.1
    while objective(high) < 0 and high < SIGMA_CEILING:
        high *= 2.0
    if objective(low) > 0 or objective(high) < 0:
        raise NumericalError("could not bracket the implied volatility", details={"bracket": [low, high]})
    return low, high


"""
GOAL: Invert bs_price in sigma.

PARAMETERS:
  C: float - Observed call price - strictly inside call_bounds
  S, K, T, r, delta_yield: float - Market inputs as for bs_price

RETURNS:
  float - sigma > 0 with |bs_price(sigma) - C| <= 1e-10 (or the closest double)

RAISES:
  ArbitrageViolationError: C on or outside a bound; details name the bound
  NumericalError: no bracket within [1e-12, 1e3]

GUARANTEES:
  - The root is unique since bs_price is strictly increasing in sigma
  - Newton polish steps never leave the Brent bracket and are skipped where vega vanishes
"""
def implied_vol(C: float, S: float, K: float, T: float, r: float, delta_yield: float = 0.0) -> float:
    lower, upper = call_bounds(S, K, T, r, delta_yield)
    if not math.isfinite(C) or C <= lower or C >= upper:
        bound = "upper" if math.isfinite(C) and C >= upper else "lower"
        raise ArbitrageViolationError(
            f"call price {C!r} is on or outside the {bound} no-arbitrage bound",
            details={"bound": bound, "price": C, "lower": lower, "upper": upper, "S": S, "K": K, "T": T},
        )

    def objective(sigma: float) -> float:
        return float(bs_price(S, K, T, r, sigma, delta_yield)) - C

    low, high = _bracket(objective)
    sigma = float(optimize.brentq(objective, low, high, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=500))

    # Newton polish inside the bracket
    for _ in range(NEWTON_STEPS):
        error = objective(sigma)
        if abs(error) <= PRICE_TOLERANCE * C:
            break
        vega = float(bs_vega(S, K, T, r, sigma, delta_yield))
        if vega < VEGA_FLOOR:
            logger.debug("implied_vol: vega %.3g below floor at sigma=%.6g; keeping Brent root", vega, sigma)
            break
        candidate = sigma - error / vega
        if not low < candidate < high:
            break
        sigma = candidate
    return sigma


def _implied_or_nan(quote: OptionQuote) -> float:
    try:
        return implied_vol(quote.C, quote.S, quote.K, quote.T, quote.r, quote.delta_yield)
    except DiffLabError as exc:
        logger.debug("implied_vol failed for K=%s T=%s: %s", quote.K, quote.T, exc)
        return math.nan


def implied_vols(quotes: QuoteSet, max_workers: Optional[int] = None) -> tuple[FloatArray, int]:
    """Implied vol per quote; failures are NaN and counted."""
    vols = np.array(parallel_map(_implied_or_nan, list(quotes), max_workers=max_workers), dtype=np.float64)
    failed = int(np.sum(~np.isfinite(vols)))
    if failed:
        logger.info("implied_vols: %d of %d quotes failed", failed, len(quotes))
    return vols, failed


"""
GOAL: Terminal asset values under the risk-neutral dynamics dX = (r - delta_yield) X dt + sigma(X) dW.

PARAMETERS:
  model: ModelSpec - Physical model; only its diffusion is kept
  x0: float - Current asset value - > 0
  r: float - Constant risk-free rate
  T: float - Maturity in years - > 0
  n_paths: int - Number of trajectories - >= 2
  steps: int - Euler substeps for families without an exact GBM law
  seed: int - Stream seed; equal seeds give common random numbers
  delta_yield: float - Continuous dividend yield, subtracted from the drift rate

RETURNS:
  FloatArray - shape (n_paths,)
"""
def terminal_values(
    model: ModelSpec,
    x0: float,
    r: float,
    T: float,
    n_paths: int,
    steps: int = 100,
    seed: int = 0,
    delta_yield: float = 0.0,
) -> FloatArray:
    if n_paths < 2:
        raise ValidationError("Monte Carlo pricing needs n_paths >= 2", details={"n_paths": n_paths})
    neutral = model.risk_neutral(r - delta_yield)
    exact = neutral.family is Family.GBM
    plan = SimPlan(
        neutral,
        x0,
        delta=T,
        n_steps=1,
        substeps=1 if exact else steps,
        seed=seed,
        scheme=Scheme.EXACT if exact else Scheme.EULER,
    )
    return simulate_many(plan, n_paths)[:, -1]


"""
GOAL: Discounted risk-neutral expected payoff of a portfolio by Monte Carlo.

PARAMETERS:
  x0: float - Spot; keyword-only and required
  delta_yield: float - Dividend yield; drift is (r - delta_yield) x, discounting stays e^{-rT}

RETURNS:
  tuple[float, float] - (e^{-rT} mean payoff, Monte Carlo standard error)

GUARANTEES:
  - Equal seeds reuse the same terminal draws, so prices are linear in the portfolio
    and monotone in strike path by path
"""
def mc_price(
    model: ModelSpec,
    portfolio: Sequence[Position],
    r: float,
    T: float,
    n_paths: int,
    steps: int = 100,
    seed: int = 0,
    *,
    x0: float,
    delta_yield: float = 0.0,
) -> tuple[float, float]:
    terminal = terminal_values(model, x0, r, T, n_paths, steps, seed, delta_yield)
    values = np.asarray(payoff(portfolio, np.maximum(terminal, 0.0)))
    discount = math.exp(-r * T)
    price = discount * float(np.mean(values))
    stderr = discount * float(np.std(values, ddof=1)) / math.sqrt(values.size)
    logger.info("mc_price: %d paths, price=%.6g stderr=%.3g", values.size, price, stderr)
    return price, stderr
