"""
Unit tests for apps/derivatives/.

Payoffs and quotes, Black-Scholes pricing and its inverse, Monte Carlo
risk-neutral pricing, and state-price density extraction.
"""

from __future__ import annotations

import logging
import math

import numpy as np
import pandas as pd
import pytest
from scipy import integrate, stats

from apps.core.exceptions import ArbitrageViolationError, ValidationError
from apps.derivatives.positions import OptionQuote, Position, QuoteSet, call_bounds, payoff
from apps.derivatives.pricing import (
    bs_price,
    bs_put,
    bs_vega,
    implied_vol,
    implied_vols,
    mc_price,
    terminal_values,
)
from apps.derivatives.spd import (
    CENTRAL_DIFFERENCE_MASS,
    fit_vol_surface,
    lognormal_spd,
    spd_from_calls,
    spd_semiparametric,
)
from apps.sde.catalog import ModelSpec

S0, RATE, MATURITY, VOL = 100.0, 0.05, 1.0, 0.2


def l1_distance(grid, a, b):
    return float(integrate.trapezoid(np.abs(a - b), grid))


def smile(m):
    return 0.2 + 0.1 * (m - 1.0) ** 2


def quotes_from_vols(S, strikes, maturities, r, delta_yield, vol_fn):
    quotes = []
    for K, T in zip(strikes, maturities):
        F = S * math.exp((r - delta_yield) * T)
        sigma = vol_fn(F / K)
        quotes.append(OptionQuote(S, K, T, r, delta_yield, float(bs_price(S, K, T, r, sigma, delta_yield))))
    return QuoteSet.of(quotes)


@pytest.fixture
def fig_portfolio():
    return [
        Position.call(1200),
        Position.put(1050),
        Position.call(1150, quantity=-1),
        Position.put(1100, quantity=-1),
        Position.cash(40),
    ]


class TestPositions:
    """
    Tests for payoffs, bounds and quote containers.
    """

    def test_call_payoff_zero_at_strike(self):
        """
        GOAL: Verify the kink of a call payoff sits at the strike.

        GUARANTEES:
          - (K - K)+ = 0 and the payoff grows one-for-one above K
        """
        assert payoff([Position.call(100)], 100.0) == 0.0
        assert payoff([Position.call(100)], 112.5) == pytest.approx(12.5)

    @pytest.mark.parametrize("x_t, expected", [(1125.0, 40.0), (1075.0, 15.0)])
    def test_portfolio_payoff(self, fig_portfolio, x_t, expected):
        """
        GOAL: Verify the four-option portfolio with a cash leg.

        GUARANTEES:
          - All options out of the money at 1125 leave the cash amount
          - Short put at 1100 costs 25 at 1075
        """
        assert payoff(fig_portfolio, x_t) == pytest.approx(expected)

    def test_payoff_vectorized(self, fig_portfolio):
        """
        GOAL: Verify payoffs broadcast over terminal values.
        """
        values = payoff(fig_portfolio, np.array([1075.0, 1125.0]))
        np.testing.assert_allclose(values, [15.0, 40.0])

    def test_invalid_positions_rejected(self):
        """
        GOAL: Verify option legs need a positive strike and payoffs a nonnegative state.
        """
        with pytest.raises(ValidationError):
            Position.call(0.0)
        with pytest.raises(ValidationError):
            Position("put", 1.0, None)
        with pytest.raises(ValidationError):
            payoff([Position.call(100)], -1.0)

    def test_quote_forward_and_bounds(self):
        """
        GOAL: Verify the cached forward and the no-arbitrage bounds of a quote.

        GUARANTEES:
          - F = S exp((r - delta) T)
          - A price between the bounds is not flagged
        """
        quote = OptionQuote(100.0, 95.0, 0.5, 0.04, 0.01, 9.0)
        assert quote.forward == pytest.approx(100.0 * math.exp(0.03 * 0.5))
        assert quote.bounds == call_bounds(100.0, 95.0, 0.5, 0.04, 0.01)
        assert quote.violation is None

    def test_negative_price_flagged_and_retained(self, caplog):
        """
        GOAL: Verify quotes violating a bound are kept but flagged.
        """
        with caplog.at_level(logging.WARNING, logger="apps.derivatives.positions"):
            quotes = QuoteSet.of([OptionQuote(100.0, 100.0, 1.0, 0.05, 0.0, -0.5), OptionQuote(100.0, 100.0, 1.0, 0.05, 0.0, 10.0)])
        assert len(quotes) == 2
        assert quotes.flagged == [0]
        assert quotes.quotes[0].violation == "lower"
        assert "no-arbitrage" in caplog.text

    def test_quote_frame_schema(self):
        """
        GOAL: Verify quote tables need every input column.
        """
        frame = pd.DataFrame({"S": [100.0], "K": [100.0], "T": [1.0], "r": [0.05], "delta": [0.0], "C": [10.0]})
        quotes = QuoteSet.from_frame(frame)
        assert len(quotes) == 1
        assert quotes.to_frame()["F"].iloc[0] == pytest.approx(100.0 * math.exp(0.05))
        with pytest.raises(ValidationError) as exc:
            QuoteSet.from_frame(frame.drop(columns=["delta"]))
        assert exc.value.details["expected"] == ["S", "K", "T", "r", "delta", "C"]

    def test_quote_rejects_nonpositive_maturity(self):
        with pytest.raises(ValidationError):
            OptionQuote(100.0, 100.0, 0.0, 0.05, 0.0, 10.0)


class TestBlackScholes:
    """
    Tests for bs_price, bs_put and bs_vega.
    """

    def test_matches_lognormal_quadrature(self):
        """
        GOAL: Verify the closed form against direct integration of the discounted payoff.

        GUARANTEES:
          - |closed form - quadrature| < 1e-4 at S=K=100, T=1, r=5%, sigma=20%
        """
        density = lambda x: lognormal_spd(S0, MATURITY, RATE, VOL, 0.0, x)
        oracle, _ = integrate.quad(lambda x: (x - 100.0) * density(x), 100.0, np.inf, limit=200)
        oracle *= math.exp(-RATE * MATURITY)
        price = bs_price(S0, 100.0, MATURITY, RATE, VOL)
        assert price == pytest.approx(10.4506, abs=1e-3)
        assert abs(price - oracle) < 1e-4

    def test_limits(self):
        """
        GOAL: Verify the zero-strike and zero-volatility limits.

        GUARANTEES:
          - K -> 0 gives S e^{-delta T}
          - sigma -> 0 gives the intrinsic forward value
        """
        assert bs_price(S0, 1e-12, 2.0, RATE, VOL, 0.02) == pytest.approx(S0 * math.exp(-0.04), rel=1e-10)
        assert bs_price(S0, 0.0, 2.0, RATE, VOL, 0.02) == pytest.approx(S0 * math.exp(-0.04))
        lower, _ = call_bounds(S0, 90.0, 1.0, RATE, 0.01)
        assert bs_price(S0, 90.0, 1.0, RATE, 1e-9, 0.01) == pytest.approx(lower, abs=1e-9)
        assert bs_price(S0, 90.0, 1.0, RATE, 0.0, 0.01) == pytest.approx(lower)

    def test_within_bounds_and_increasing_in_sigma(self):
        """
        GOAL: Verify prices respect the bounds and increase strictly in sigma.
        """
        sigmas = np.linspace(0.05, 3.0, 300)
        prices = bs_price(S0, 110.0, 0.5, RATE, sigmas, 0.01)
        lower, upper = call_bounds(S0, 110.0, 0.5, RATE, 0.01)
        assert np.all(np.diff(prices) > 0)
        assert np.all((prices >= lower) & (prices <= upper))

    def test_put_matches_closed_form(self):
        """
        GOAL: Verify the parity put against the textbook put formula.
        """
        S, K, T, r, q, sigma = 100.0, 105.0, 0.75, 0.03, 0.01, 0.25
        d1 = (math.log(S / K) + (r - q + 0.5 * sigma**2) * T) / (sigma * math.sqrt(T))
        d2 = d1 - sigma * math.sqrt(T)
        expected = K * math.exp(-r * T) * stats.norm.cdf(-d2) - S * math.exp(-q * T) * stats.norm.cdf(-d1)
        assert bs_put(S, K, T, r, sigma, q) == pytest.approx(expected, abs=1e-10)

    def test_vega_matches_finite_difference(self):
        eps = 1e-6
        bump = (bs_price(S0, 95.0, 1.0, RATE, VOL + eps) - bs_price(S0, 95.0, 1.0, RATE, VOL - eps)) / (2 * eps)
        assert bs_vega(S0, 95.0, 1.0, RATE, VOL) == pytest.approx(bump, rel=1e-6)


class TestImpliedVol:
    """
    Tests for implied_vol and implied_vols.
    """

    @pytest.mark.parametrize("sigma", [0.05, 0.2, 0.8])
    def test_roundtrip(self, sigma):
        """
        GOAL: Verify implied_vol inverts bs_price.

        GUARANTEES:
          - sigma recovered to 1e-8, price to 1e-10
        """
        price = bs_price(S0, 105.0, MATURITY, RATE, sigma, 0.01)
        recovered = implied_vol(price, S0, 105.0, MATURITY, RATE, 0.01)
        assert recovered == pytest.approx(sigma, abs=1e-8)
        assert abs(bs_price(S0, 105.0, MATURITY, RATE, recovered, 0.01) - price) < 1e-10

    def test_deep_out_of_the_money_converges(self):
        """
        GOAL: Verify the solver converges where vega is nearly zero.

        GUARANTEES:
          - K = 3S quote recovers sigma to 1e-6 relative
        """
        price = bs_price(S0, 300.0, MATURITY, RATE, 0.3)
        assert 0 < price < 0.1
        assert implied_vol(price, S0, 300.0, MATURITY, RATE) == pytest.approx(0.3, rel=1e-6)

    @pytest.mark.parametrize("where, bound", [("lower", "lower"), ("upper", "upper"), ("below", "lower")])
    def test_bound_violations_rejected(self, where, bound):
        """
        GOAL: Verify prices on or outside the bounds are rejected with the bound named.
        """
        lower, upper = call_bounds(S0, 100.0, MATURITY, RATE)
        price = {"lower": lower, "upper": upper, "below": lower - 1.0}[where]
        with pytest.raises(ArbitrageViolationError) as exc:
            implied_vol(price, S0, 100.0, MATURITY, RATE)
        assert exc.value.details["bound"] == bound
        assert exc.value.details["lower"] == pytest.approx(lower)
        assert exc.value.exit_code == 2

    def test_batch_counts_failures(self):
        """
        GOAL: Verify batch inversion marks failing quotes as NaN and counts them.
        """
        good = OptionQuote(S0, 100.0, 1.0, RATE, 0.0, float(bs_price(S0, 100.0, 1.0, RATE, 0.25)))
        bad = OptionQuote(S0, 100.0, 1.0, RATE, 0.0, 200.0)
        vols, failed = implied_vols(QuoteSet.of([good, bad]), max_workers=1)
        assert failed == 1
        assert vols[0] == pytest.approx(0.25, abs=1e-8)
        assert math.isnan(vols[1])


class TestMonteCarlo:
    """
    Tests for mc_price.
    """

    def test_zero_volatility_is_deterministic(self):
        """
        GOAL: Verify a zero-volatility model prices the deterministic Euler forward.

        GUARANTEES:
          - Every path ends at x0 (1 + rT/M)^M, so the price is exact and the stderr 0
        """
        model = ModelSpec.generic(drift=lambda x: 0.0 * x, diffusion=lambda x: 0.0 * x)
        price, stderr = mc_price(model, [Position.call(90.0)], RATE, MATURITY, n_paths=8, steps=50, seed=3, x0=S0)
        forward = S0 * (1.0 + RATE * MATURITY / 50) ** 50
        assert price == pytest.approx(math.exp(-RATE) * (forward - 90.0), rel=1e-12)
        assert stderr == pytest.approx(0.0, abs=1e-12)

    def test_gbm_matches_black_scholes(self):
        """
        GOAL: Verify Monte Carlo pricing under exact GBM sampling.

        GUARANTEES:
          - Within 4 Monte Carlo standard errors of bs_price at 20000 paths
        """
        model = ModelSpec.gbm(mu=0.12, sigma=VOL)
        price, stderr = mc_price(model, [Position.call(100.0)], RATE, MATURITY, n_paths=20_000, seed=11, x0=S0)
        assert abs(price - bs_price(S0, 100.0, MATURITY, RATE, VOL)) < 4 * stderr

    def test_dividend_yield_matches_black_scholes(self):
        """
        GOAL: Verify a dividend yield lowers the risk-neutral drift to (r - q) x.

        GUARANTEES:
          - Within 4 standard errors of bs_price with q = 0.05 (about 7.5, not the 10.45 of q = 0)
        """
        model = ModelSpec.gbm(mu=0.12, sigma=VOL)
        price, stderr = mc_price(
            model, [Position.call(100.0)], RATE, MATURITY, n_paths=40_000, seed=13, x0=S0, delta_yield=0.05
        )
        assert abs(price - bs_price(S0, 100.0, MATURITY, RATE, VOL, 0.05)) < 4 * stderr
        assert price < bs_price(S0, 100.0, MATURITY, RATE, VOL) - 2.0

    def test_spot_is_required(self):
        with pytest.raises(TypeError):
            mc_price(ModelSpec.gbm(0.0, 0.2), [Position.call(1.0)], 0.0, 1.0, n_paths=100)

    @pytest.mark.slow
    def test_gbm_matches_black_scholes_million_paths(self):
        model = ModelSpec.gbm(mu=0.12, sigma=VOL)
        price, stderr = mc_price(model, [Position.call(100.0)], RATE, MATURITY, n_paths=1_000_000, seed=2024, x0=S0)
        assert stderr < 0.02
        assert abs(price - bs_price(S0, 100.0, MATURITY, RATE, VOL)) < 3 * stderr

    def test_portfolio_price_is_sum_of_legs(self, fig_portfolio):
        """
        GOAL: Verify linearity with common random numbers.
        """
        model = ModelSpec.gbm(mu=0.0, sigma=0.15)
        kwargs = dict(r=0.02, T=0.5, n_paths=5000, seed=7, x0=1125.0)
        total, _ = mc_price(model, fig_portfolio, **kwargs)
        legs = sum(mc_price(model, [leg], **kwargs)[0] for leg in fig_portfolio)
        assert total == pytest.approx(legs, rel=1e-10, abs=1e-9)

    def test_monotone_in_strike(self):
        """
        GOAL: Verify lower strikes price higher, path by path, under common random numbers.
        """
        model = ModelSpec.cir(kappa=0.5, alpha=1.0, sigma=0.3)
        terminal = terminal_values(model, 1.0, 0.03, 1.0, n_paths=2000, steps=20, seed=5)
        low = payoff([Position.call(0.9)], terminal)
        high = payoff([Position.call(1.1)], terminal)
        assert np.all(low >= high)
        prices = [mc_price(model, [Position.call(k)], 0.03, 1.0, 2000, steps=20, seed=5, x0=1.0)[0] for k in (0.9, 1.0, 1.1)]
        assert prices[0] > prices[1] > prices[2]

    def test_too_few_paths_rejected(self):
        with pytest.raises(ValidationError):
            mc_price(ModelSpec.gbm(0.0, 0.2), [Position.call(1.0)], 0.0, 1.0, n_paths=1, x0=1.0)


class TestStatePriceDensity:
    """
    Tests for spd_from_calls and lognormal_spd.
    """

    @pytest.fixture
    def bs_curve(self):
        strikes = np.arange(20.0, 300.0 + 1e-9, 0.5)
        return strikes, np.asarray(bs_price(S0, strikes, MATURITY, RATE, VOL))

    def test_lognormal_spd_integrates_to_one(self):
        mass, _ = integrate.quad(lambda k: lognormal_spd(S0, 2.0, RATE, 0.3, 0.01, k), 0.0, np.inf, limit=200)
        assert mass == pytest.approx(1.0, abs=1e-8)

    def test_local_quadratic_recovers_lognormal(self, bs_curve):
        """
        GOAL: Verify Breeden-Litzenberger extraction from an analytic call curve.

        GUARANTEES:
          - L1 distance to the lognormal SPD < 0.02
          - Mass in [0.98, 1.02]
        """
        strikes, calls = bs_curve
        estimate = spd_from_calls(strikes, calls, RATE, MATURITY)
        truth = lognormal_spd(S0, MATURITY, RATE, VOL, 0.0, estimate.strikes)
        assert l1_distance(estimate.strikes, estimate.density, truth) < 0.02
        assert 0.98 <= estimate.mass <= 1.02
        assert estimate.curve.diagnostics["method"] == "local_quadratic"

    def test_exact_grid_recovers_lognormal(self, bs_curve):
        strikes, calls = bs_curve
        estimate = spd_from_calls(strikes, calls, RATE, MATURITY, exact_grid=True)
        truth = lognormal_spd(S0, MATURITY, RATE, VOL, 0.0, estimate.strikes)
        assert l1_distance(estimate.strikes, estimate.density, truth) < 1e-3
        assert estimate.strikes[0] == pytest.approx(20.5)
        np.testing.assert_array_equal(estimate.curve.mass, CENTRAL_DIFFERENCE_MASS)

    def test_linear_segment_has_zero_density(self):
        """
        GOAL: Verify an affine call curve carries no state-price mass.
        """
        strikes = np.linspace(10.0, 60.0, 51)
        calls = 50.0 - 0.5 * strikes
        for exact in (False, True):
            estimate = spd_from_calls(strikes, calls, RATE, MATURITY, exact_grid=exact)
            assert np.all(np.abs(estimate.density) < 1e-8)

    @pytest.mark.parametrize("sigma", [0.1, 0.3, 0.6])
    def test_mass_tends_to_one_on_wide_grid(self, sigma):
        """
        GOAL: Verify the extracted density is nonnegative with unit mass on a wide grid.
        """
        strikes = np.arange(0.5, 1500.0 + 1e-9, 0.5)
        calls = np.asarray(bs_price(S0, strikes, MATURITY, RATE, sigma))
        estimate = spd_from_calls(strikes, calls, RATE, MATURITY, exact_grid=True)
        assert np.all(estimate.density >= 0)
        assert estimate.mass == pytest.approx(1.0, abs=0.01)

    def test_noisy_quotes_keep_mass(self):
        """
        GOAL: Verify extraction from calls with 1% implied-volatility noise.

        GUARANTEES:
          - Mass in [0.9, 1.05]
          - Pre-clip mass is always reported
        """
        generator = np.random.default_rng(20260)
        strikes = np.arange(40.0, 250.0 + 1e-9, 1.0)
        sigmas = VOL * (1.0 + 0.01 * generator.standard_normal(strikes.size))
        calls = np.asarray(bs_price(S0, strikes, MATURITY, RATE, sigmas))
        estimate = spd_from_calls(strikes, calls, RATE, MATURITY)
        assert 0.9 <= estimate.mass <= 1.05
        assert math.isfinite(estimate.pre_clip_mass)
        assert np.all(estimate.density >= 0)

    def test_non_convex_curve_warns_and_clips(self, caplog):
        """
        GOAL: Verify concave call curves are clipped, flagged and warned about.
        """
        strikes = np.linspace(10.0, 60.0, 51)
        calls = 60.0 - 0.01 * strikes**2
        with caplog.at_level(logging.WARNING, logger="apps.derivatives.spd"):
            estimate = spd_from_calls(strikes, calls, RATE, MATURITY, exact_grid=True)
        assert estimate.clipped_points == estimate.strikes.size
        assert estimate.pre_clip_mass < 0
        assert estimate.mass == 0.0
        assert set(estimate.curve.status) == {"clipped"}
        assert "far from convex" in caplog.text

    def test_renormalize_on_request(self, bs_curve):
        strikes, calls = bs_curve
        estimate = spd_from_calls(strikes[100:300], calls[100:300], RATE, MATURITY, exact_grid=True, renormalize=True)
        assert estimate.renormalized
        assert estimate.mass == 1.0
        assert integrate.trapezoid(estimate.density, estimate.strikes) == pytest.approx(1.0)

    def test_input_checks(self):
        with pytest.raises(ValidationError):
            spd_from_calls([1.0, 2.0, 3.0, 4.0], [4.0, 3.0, 2.0, 1.0], RATE, MATURITY)
        with pytest.raises(ValidationError):
            spd_from_calls([1.0, 2.0, 4.0, 5.0, 6.0], [5.0, 4.0, 2.0, 1.0, 0.5], RATE, MATURITY, exact_grid=True)
        with pytest.raises(ValidationError):
            spd_from_calls([1.0, 3.0, 2.0, 4.0, 5.0], [5.0, 4.0, 3.0, 2.0, 1.0], RATE, MATURITY)


class TestSemiparametricSPD:
    """
    Tests for fit_vol_surface and spd_semiparametric.
    """

    @pytest.fixture
    def flat_quotes(self):
        moneyness = np.linspace(0.6, 1.8, 25)
        maturities = np.repeat([0.75, 1.0, 1.25], moneyness.size)
        forwards = S0 * np.exp((RATE - 0.01) * maturities)
        strikes = forwards / np.tile(moneyness, 3)
        return quotes_from_vols(S0, strikes, maturities, RATE, 0.01, lambda m: VOL)

    def test_flat_surface_and_lognormal_spd(self, flat_quotes):
        """
        GOAL: Verify constant-vol quotes give a flat surface and the lognormal SPD.

        GUARANTEES:
          - Surface within 1e-3 of sigma at the target maturity
          - SPD within 0.02 of the lognormal in L1
        """
        surface, excluded = fit_vol_surface(flat_quotes)
        assert excluded == 0
        assert not surface.single_maturity
        np.testing.assert_allclose(surface(np.linspace(0.7, 1.6, 20), 1.0), VOL, atol=1e-3)

        estimate = spd_semiparametric(flat_quotes, S0, 1.0, RATE, 0.01)
        truth = lognormal_spd(S0, 1.0, RATE, VOL, 0.01, estimate.strikes)
        assert l1_distance(estimate.strikes, estimate.density, truth) < 0.02
        assert estimate.curve.diagnostics["method"] == "semiparametric"
        assert estimate.curve.diagnostics["excluded_quotes"] == 0

    def test_homogeneity_in_spot_and_strike(self):
        """
        GOAL: Verify the surface depends on quotes only through F/K and T.

        GUARANTEES:
          - Scaling S, K and C by 2 leaves sigma(F/K) unchanged to 1e-10
        """
        moneyness = np.linspace(0.7, 1.4, 60)
        forward = S0 * math.exp(RATE * 0.5)
        base = quotes_from_vols(S0, forward / moneyness, [0.5] * 60, RATE, 0.0, smile)
        scaled = QuoteSet.of(OptionQuote(2 * q.S, 2 * q.K, q.T, q.r, q.delta_yield, 2 * q.C) for q in base)
        a, _ = fit_vol_surface(base, h_moneyness=0.05)
        b, _ = fit_vol_surface(scaled, h_moneyness=0.05)
        points = np.linspace(0.75, 1.35, 13)
        np.testing.assert_allclose(a(points, 0.5), b(points, 0.5), rtol=1e-10)

    def test_smile_reprices_held_out_quotes(self):
        """
        GOAL: Verify the smoothed smile reprices quotes it was not fitted on.

        GUARANTEES:
          - RMS relative pricing error on held-out quotes below 0.5%
        """
        T = 0.5
        moneyness = np.linspace(0.7, 1.4, 100)
        forward = S0 * math.exp(RATE * T)
        quotes = quotes_from_vols(S0, forward / moneyness, [T] * 100, RATE, 0.0, smile)
        held_out = np.arange(2, 100, 5)
        training = QuoteSet.of(q for i, q in enumerate(quotes) if i not in set(held_out))
        surface, _ = fit_vol_surface(training, h_moneyness=0.02)
        test = [quotes.quotes[i] for i in held_out]
        sigma = surface(np.array([q.moneyness for q in test]), T)
        repriced = np.array([bs_price(q.S, q.K, q.T, q.r, s) for q, s in zip(test, sigma)])
        observed = np.array([q.C for q in test])
        assert math.sqrt(np.mean(((repriced - observed) / observed) ** 2)) < 0.005

    def test_too_few_quotes_rejected(self, flat_quotes):
        with pytest.raises(ValidationError):
            spd_semiparametric(QuoteSet.of(flat_quotes.quotes[:49]), S0, 1.0, RATE, 0.01)
