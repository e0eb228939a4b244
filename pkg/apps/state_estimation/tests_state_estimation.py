"""
Unit tests for apps/state_estimation/.

Difference schemes, kernel-ratio and local-linear drift/volatility estimators,
the fixed-interval volatility inversion, density-based drift and the
state/time forecast combination.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
import pytest
from scipy import stats

from apps.core.exceptions import ValidationError
from apps.sde.paths import SamplePath
from apps.sde.services import invariant_density
from apps.smoothing.bandwidth import silverman_bandwidth
from apps.smoothing.curves import PointStatus
from apps.smoothing.kernels import KernelShape, KernelSpec
from apps.state_estimation.forecasting import integrate_time_state, volatility_forecast
from apps.state_estimation.schemes import difference_scheme
from apps.state_estimation.services import (
    drift_from_density,
    drift_from_invariant_density,
    estimate_fan_yao,
    estimate_order_k,
    estimate_stanton,
    estimate_vol_fixed_delta,
)

EPANECHNIKOV = KernelShape.EPANECHNIKOV


def _central_grid(values, lower=0.1, upper=0.9, n=30):
    return np.linspace(np.quantile(values, lower), np.quantile(values, upper), n)


class TestDifferenceScheme:
    """
    Tests for order-k coefficients and variance-inflation factors.
    """

    def test_first_and_second_order(self):
        """
        GOAL: Verify the exact coefficients for k = 1 and k = 2.

        GUARANTEES:
          - k=1: a=[1], V1=V2=1
          - k=2: a=[2, -1/2], b=[3/2, -1/2], V1=5/2, V2=3
        """
        first = difference_scheme(1)
        assert first.coefficients == (Fraction(1),)
        assert first.v1 == 1 and first.v2 == 1
        second = difference_scheme(2)
        assert second.coefficients == (Fraction(2), Fraction(-1, 2))
        assert second.increment_weights == (Fraction(3, 2), Fraction(-1, 2))
        assert second.v1 == Fraction(5, 2)
        assert second.v2 == 3

    @pytest.mark.parametrize("k, v1, v2", [(3, 4.83, 8.00), (4, 9.25, 21.66), (5, 18.95, 61.50)])
    def test_inflation_table(self, k, v1, v2):
        """
        GOAL: Verify the tabulated inflation factors.

        GUARANTEES:
          - V1, V2 match the table to its two printed decimals
        """
        scheme = difference_scheme(k)
        assert float(scheme.v1) == pytest.approx(v1, abs=0.01)
        assert float(scheme.v2) == pytest.approx(v2, abs=0.01)

    @pytest.mark.parametrize("k", [1, 2, 3, 4, 5, 7])
    def test_first_order_consistency(self, k):
        """
        GOAL: Verify sum_j j a_{k,j} = 1 exactly.

        GUARANTEES:
          - Exact rational identity for every order, including overridden ones
        """
        scheme = difference_scheme(k, allow_high_order=True)
        assert sum(j * a for j, a in enumerate(scheme.coefficients, start=1)) == 1

    def test_high_order_needs_override(self):
        """
        GOAL: Verify orders above 5 are refused without the override.

        GUARANTEES:
          - ValidationError for k=6 and k=0
        """
        with pytest.raises(ValidationError):
            difference_scheme(6)
        with pytest.raises(ValidationError):
            difference_scheme(0)

    @pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
    def test_monte_carlo_variances(self, k):
        """
        GOAL: Verify V1 and V2 against Brownian increments.

        GUARANTEES:
          - Var(sum b_m e_m) = V1 and Var(sum a_j W_j^2) / 2 = V2 within 4 Monte Carlo standard errors
        """
        scheme = difference_scheme(k)
        gen = np.random.default_rng(1000 + k)
        shocks = gen.standard_normal((1_000_000, k))
        linear = shocks @ scheme.b
        walks = np.cumsum(shocks, axis=1)
        quadratic = (walks * walks) @ scheme.a
        for sample, target in ((linear, float(scheme.v1)), (quadratic / math.sqrt(2.0), float(scheme.v2))):
            centred = (sample - sample.mean()) ** 2
            se = centred.std() / math.sqrt(sample.size)
            assert abs(centred.mean() - target) < 4 * se


class TestStantonEstimator:
    """
    Tests for the kernel-ratio estimator.
    """

    def test_constant_path(self):
        """
        GOAL: Verify a constant path gives zero drift and zero volatility.

        GUARANTEES:
          - drift == 0 and vol2 == 0 at the constant state
        """
        path = SamplePath(1 / 52, np.full(40, 0.07))
        drift, vol2 = estimate_stanton(path, KernelSpec(EPANECHNIKOV, 0.01))
        assert drift.value.tolist() == [0.0]
        assert vol2.value.tolist() == [0.0]

    def test_vasicek_volatility_band(self, vasicek_model, make_exact_path):
        """
        GOAL: Verify the squared-volatility estimate covers the true constant sigma^2.

        GUARANTEES:
          - 4e-4 inside the 2-stderr band at >= 90% of interior grid points (n = 5e4 weekly)
        """
        path = make_exact_path(vasicek_model, 1 / 52, 50_000, seed=101)
        grid = _central_grid(path.values)
        _, vol2 = estimate_stanton(path, KernelSpec(EPANECHNIKOV, 0.0025), grid)
        covered = np.abs(vol2.value - 4e-4) <= 2 * vol2.stderr
        assert covered.mean() >= 0.9

    def test_short_path_rejected(self):
        """
        GOAL: Verify the minimum path length.

        GUARANTEES:
          - ValidationError below 20 observations
        """
        with pytest.raises(ValidationError):
            estimate_stanton(SamplePath(1.0, np.arange(10.0)), KernelSpec(EPANECHNIKOV, 1.0))

    @pytest.mark.slow
    def test_spurious_nonlinearity_at_sample_extremes(self, cir_model, make_exact_path, replication_seeds):
        """
        GOAL: Reproduce apparent drift nonlinearity from a linear-drift CIR model.

        GUARANTEES:
          - Over 100 daily replications (n = 7500), the drift estimate departs from the
            least-squares line by more than 2 stderr somewhere in the outer 10% state
            quantiles in >= 50% of runs
          - Interior departures stay below 2 stderr in >= 80% of runs
        """
        outer_hits, interior_clean = [], []
        for seed in replication_seeds(6101, 100):
            path = make_exact_path(cir_model, 1 / 252, 7500, seed=seed)
            x = np.asarray(path.values[:-1])
            y = np.diff(path.values) / path.delta
            kernel = KernelSpec(EPANECHNIKOV, silverman_bandwidth(x, EPANECHNIKOV))
            drift, _ = estimate_stanton(path, kernel)
            slope, intercept = np.polyfit(x, y, 1)
            ok = np.isfinite(drift.value) & (drift.stderr > 0)
            score = np.abs(drift.value - (intercept + slope * drift.grid))[ok] / drift.stderr[ok]
            low, high = np.quantile(x, [0.1, 0.9])
            grid = drift.grid[ok]
            outer = (grid < low) | (grid > high)
            outer_hits.append(bool(np.any(score[outer] > 2.0)))
            interior_clean.append(bool(np.all(score[~outer] < 2.0)))
        assert np.mean(outer_hits) >= 0.5
        assert np.mean(interior_clean) >= 0.8


class TestFanYaoEstimator:
    """
    Tests for the local-linear estimator with residual-based volatility.
    """

    def test_deterministic_linear_drift(self):
        """
        GOAL: Verify exact recovery of an affine drift on a noise-free path.

        GUARANTEES:
          - drift == 0.5 (2 - x) to 1e-8; vol2 == 0 to 1e-18
        """
        delta = 0.01
        values = [1.0]
        for _ in range(300):
            values.append(values[-1] + 0.5 * (2.0 - values[-1]) * delta)
        path = SamplePath(delta, np.array(values))
        grid = np.linspace(1.2, 1.7, 11)
        drift, vol2 = estimate_fan_yao(path, KernelSpec(EPANECHNIKOV, 0.1), grid=grid)
        np.testing.assert_allclose(drift.value, 0.5 * (2.0 - grid), atol=1e-8)
        assert np.all(np.abs(vol2.value) < 1e-18)

    def test_cir_volatility_band(self, cir_weekly_path):
        """
        GOAL: Verify the residual-based squared volatility covers sigma^2 x for CIR.

        GUARANTEES:
          - sigma^2 x inside the 2-stderr band at >= 90% of interior grid points
        """
        grid = _central_grid(cir_weekly_path.values)
        _, vol2 = estimate_fan_yao(cir_weekly_path, KernelSpec(EPANECHNIKOV, 0.01), grid=grid)
        truth = 0.07830**2 * grid
        assert (np.abs(vol2.value - truth) <= 2 * vol2.stderr).mean() >= 0.9
        assert vol2.diagnostics["residual"] is True

    @pytest.mark.slow
    def test_residual_form_beats_raw_differences(self, cir_model, make_exact_path):
        """
        GOAL: Verify squared residuals estimate sigma^2 at least as well as raw squared differences.

        GUARANTEES:
          - Mean interior MSE over 100 monthly CIR replications is no larger for the residual form
        """
        kernel = KernelSpec(EPANECHNIKOV, 0.015)
        residual_mse, stanton_mse = [], []
        for seed in range(100):
            path = make_exact_path(cir_model, 1 / 12, 2000, seed=5000 + seed)
            grid = _central_grid(path.values, 0.2, 0.8, 15)
            truth = 0.07830**2 * grid
            _, fan_yao_vol2 = estimate_fan_yao(path, kernel, grid=grid)
            _, stanton_vol2 = estimate_stanton(path, kernel, grid)
            residual_mse.append(np.nanmean((fan_yao_vol2.value - truth) ** 2))
            stanton_mse.append(np.nanmean((stanton_vol2.value - truth) ** 2))
        assert np.mean(residual_mse) <= np.mean(stanton_mse)


class TestOrderKEstimator:
    """
    Tests for the order-k difference estimator.
    """

    def test_first_order_matches_fan_yao(self, cir_path):
        """
        GOAL: Verify k = 1 reproduces the raw-difference local-linear estimator exactly.

        GUARANTEES:
          - drift and vol2 values and stderr are bit-identical
        """
        kernel = KernelSpec(EPANECHNIKOV, 0.02)
        grid = _central_grid(cir_path.values)
        drift_k, vol2_k = estimate_order_k(cir_path, 1, kernel, grid)
        drift_f, vol2_f = estimate_fan_yao(cir_path, kernel, grid=grid, residual=False)
        np.testing.assert_array_equal(drift_k.value, drift_f.value)
        np.testing.assert_array_equal(vol2_k.value, vol2_f.value)
        np.testing.assert_array_equal(vol2_k.stderr, vol2_f.stderr)

    def test_second_order_stderr_inflation(self, cir_weekly_path):
        """
        GOAL: Verify the k = 2 volatility bands are wider by about sqrt(3).

        GUARANTEES:
          - Mean stderr ratio of vol (sd scale) over the interior grid in sqrt(3) +- 15%
        """
        kernel = KernelSpec(EPANECHNIKOV, 0.01)
        grid = _central_grid(cir_weekly_path.values, 0.2, 0.8, 20)
        _, first = estimate_order_k(cir_weekly_path, 1, kernel, grid)
        _, second = estimate_order_k(cir_weekly_path, 2, kernel, grid)
        vol_se_first = first.stderr / (2 * np.sqrt(first.value))
        vol_se_second = second.stderr / (2 * np.sqrt(second.value))
        ratio = float(np.mean(vol_se_second / vol_se_first))
        assert math.sqrt(3) * 0.85 <= ratio <= math.sqrt(3) * 1.15
        assert second.diagnostics["v2"] == pytest.approx(3.0)

    def test_translation_invariance(self, cir_path):
        """
        GOAL: Verify shifting data and grid leaves vol2 unchanged.

        GUARANTEES:
          - vol2 agrees to 1e-10 after adding 1.0 to the path and grid
        """
        kernel = KernelSpec(EPANECHNIKOV, 0.02)
        grid = _central_grid(cir_path.values)
        _, base = estimate_order_k(cir_path, 2, kernel, grid)
        shifted = SamplePath(cir_path.delta, cir_path.values + 1.0)
        _, moved = estimate_order_k(shifted, 2, kernel, grid + 1.0)
        np.testing.assert_allclose(moved.value, base.value, atol=1e-10)


class TestFixedDeltaVolatility:
    """
    Tests for the stationarity-based volatility inversion.
    """

    def test_cir_relative_error(self, cir_model, make_exact_path):
        """
        GOAL: Verify the inversion recovers sigma^2 x for CIR at a weekly interval.

        GUARANTEES:
          - Relative error below 10% on the central 80% mass region, n = 1e5
        """
        path = make_exact_path(cir_model, 1 / 52, 100_000, seed=303)
        grid = _central_grid(path.values)
        h = silverman_bandwidth(path.values, EPANECHNIKOV)
        vol2 = estimate_vol_fixed_delta(path, KernelSpec(EPANECHNIKOV, h), grid)
        truth = 0.07830**2 * grid
        assert np.max(np.abs(vol2.value / truth - 1.0)) < 0.10
        assert vol2.diagnostics["lower_limit"] == 0.0

    def test_vasicek_roughly_constant(self, vasicek_model, make_exact_path):
        """
        GOAL: Verify a constant-sigma model gives a flat estimate.

        GUARANTEES:
          - max / min on the central region below 1.3
        """
        path = make_exact_path(vasicek_model, 1 / 12, 20_000, seed=404)
        grid = _central_grid(path.values)
        h = silverman_bandwidth(path.values, EPANECHNIKOV)
        vol2 = estimate_vol_fixed_delta(path, KernelSpec(EPANECHNIKOV, h), grid)
        assert vol2.value.max() / vol2.value.min() < 1.3

    def test_lower_endpoint_is_zero_and_flagged(self, vasicek_path):
        """
        GOAL: Verify the estimate at the integration lower limit does not blow up.

        GUARANTEES:
          - value 0 with status clipped at the sample minimum
        """
        low = float(vasicek_path.values.min())
        grid = np.array([low, 0.06])
        vol2 = estimate_vol_fixed_delta(vasicek_path, KernelSpec(EPANECHNIKOV, 0.005), grid)
        assert vol2.value[0] == 0.0
        assert vol2.status[0] == PointStatus.CLIPPED.value
        assert np.isfinite(vol2.value[1])

    def test_density_factor_ignores_time_order(self, vasicek_path):
        """
        GOAL: Verify the density factor does not depend on the order of observations.

        GUARANTEES:
          - mass (a function of the density weights only) is identical for the reversed path
        """
        kernel = KernelSpec(EPANECHNIKOV, 0.005)
        grid = _central_grid(vasicek_path.values)
        forward = estimate_vol_fixed_delta(vasicek_path, kernel, grid)
        reversed_path = SamplePath(vasicek_path.delta, vasicek_path.values[::-1])
        backward = estimate_vol_fixed_delta(reversed_path, kernel, grid)
        np.testing.assert_allclose(forward.mass, backward.mass, rtol=1e-12)


class TestDensityBasedDrift:
    """
    Tests for drift recovery from the invariant density.
    """

    @pytest.mark.parametrize("fixture", ["vasicek_model", "cir_model"])
    def test_identity_with_exact_inputs(self, fixture, request):
        """
        GOAL: Verify the density identity returns kappa (alpha - x) with exact inputs.

        GUARANTEES:
          - Agreement within 1e-6 on a central grid
        """
        model = request.getfixturevalue(fixture)
        p = model.params
        grid = np.linspace(p["alpha"] * 0.6, p["alpha"] * 1.4, 25)

        def vol2(u):
            return model.diffusion(0.0, u) ** 2

        drift = drift_from_invariant_density(vol2, lambda u: np.asarray(invariant_density(model, u)), grid)
        np.testing.assert_allclose(drift, p["kappa"] * (p["alpha"] - grid), atol=1e-6)

    @pytest.mark.slow
    def test_simulated_vasicek_band(self, vasicek_model, make_exact_path):
        """
        GOAL: Verify the estimated drift covers kappa (alpha - x) on daily Vasicek data.

        GUARANTEES:
          - Truth inside the 2-stderr band at >= 85% of central grid points (n = 1e5)
        """
        path = make_exact_path(vasicek_model, 1 / 252, 100_000, seed=505)
        grid = _central_grid(path.values, 0.2, 0.8, 20)
        drift = drift_from_density(
            lambda u: np.full_like(u, 4e-4), path, KernelSpec(EPANECHNIKOV, 0.006), grid, n_batches=20
        )
        truth = 0.5 * (0.06 - grid)
        assert (np.abs(drift.value - truth) <= 2 * drift.stderr).mean() >= 0.85

    def test_linear_in_volatility(self, vasicek_path):
        """
        GOAL: Verify doubling sigma^2 doubles the drift.

        GUARANTEES:
          - drift and stderr scale by exactly 2
        """
        kernel = KernelSpec(EPANECHNIKOV, 0.006)
        grid = _central_grid(vasicek_path.values)
        base = drift_from_density(lambda u: np.full_like(u, 4e-4), vasicek_path, kernel, grid)
        doubled = drift_from_density(lambda u: np.full_like(u, 8e-4), vasicek_path, kernel, grid)
        np.testing.assert_allclose(doubled.value, 2 * base.value, rtol=1e-12)
        np.testing.assert_allclose(doubled.stderr, 2 * base.stderr, rtol=1e-12)


class TestTimeStateIntegration:
    """
    Tests for the inverse-variance combination and the rolling forecast.
    """

    def test_equal_stderr_averages(self):
        """
        GOAL: Verify equal precision gives a simple average.

        GUARANTEES:
          - value is the mean; variance halves
        """
        combined = integrate_time_state(1.0, 0.2, 3.0, 0.2)
        assert combined.value == pytest.approx(2.0)
        assert combined.stderr**2 == pytest.approx(0.04 / 2)

    def test_two_to_one_ratio(self):
        """
        GOAL: Verify the weights for a 2:1 stderr ratio.

        GUARANTEES:
          - weights 1/5 and 4/5
        """
        combined = integrate_time_state(1.0, 2.0, 0.0, 1.0)
        assert combined.state_weight == pytest.approx(0.2)
        assert combined.time_weight == pytest.approx(0.8)
        assert combined.value == pytest.approx(0.2)

    def test_zero_stderr_wins(self):
        """
        GOAL: Verify an exact estimate takes all the weight.

        GUARANTEES:
          - value of the zero-stderr estimate with weight 1
        """
        combined = integrate_time_state(1.0, 0.0, 5.0, 1.0)
        assert (combined.value, combined.state_weight) == (1.0, 1.0)
        with pytest.raises(ValidationError):
            integrate_time_state(1.0, -0.1, 5.0, 1.0)

    def test_forecast_uses_history_only(self, cir_weekly_path):
        """
        GOAL: Verify the forecast ignores observations after its index.

        GUARANTEES:
          - Changing every value after the index leaves the forecast unchanged
        """
        index = 3000
        before = volatility_forecast(cir_weekly_path, index, 0.003, 52)
        values = cir_weekly_path.values.copy()
        values[index + 1 :] *= 2.0
        after = volatility_forecast(SamplePath(cir_weekly_path.delta, values), index, 0.003, 52)
        assert before == after
        assert before.combined.state_weight + before.combined.time_weight == pytest.approx(1.0)

    @pytest.mark.slow
    def test_integrated_forecast_mse(self, cir_weekly_path):
        """
        GOAL: Verify combining state and time estimates does not lose accuracy.

        GUARANTEES:
          - Over 200 rolling forecasts, MSE of the combination <= 1.05 min(state, time)
        """
        errors = {"state": [], "time": [], "combined": []}
        for index in range(4800, 5000):
            forecast = volatility_forecast(cir_weekly_path, index, 0.003, 52)
            truth = 0.07830**2 * cir_weekly_path.values[index]
            errors["state"].append((forecast.state.value - truth) ** 2)
            errors["time"].append((forecast.time.value - truth) ** 2)
            errors["combined"].append((forecast.combined.value - truth) ** 2)
        mse = {key: float(np.mean(value)) for key, value in errors.items()}
        assert mse["combined"] <= 1.05 * min(mse["state"], mse["time"])

    def test_forecast_needs_band_points(self):
        """
        GOAL: Verify an empty state band is reported.

        GUARANTEES:
          - ValidationError when no past state is near the current one
        """
        path = SamplePath(1.0, np.arange(100, dtype=float))
        with pytest.raises(ValidationError):
            volatility_forecast(path, 99, 0.5, 10)


def test_stationary_gaussian_sanity(vasicek_path):
    """
    GOAL: Verify the weekly Vasicek fixture has the Gaussian invariant law used above.

    GUARANTEES:
      - KS p-value above 1e-4 against Normal(0.06, 0.02^2)
    """
    sd = 0.02 / math.sqrt(2 * 0.5)
    thinned = vasicek_path.values[::50]
    assert stats.kstest(thinned, "norm", args=(0.06, sd)).pvalue > 1e-4
