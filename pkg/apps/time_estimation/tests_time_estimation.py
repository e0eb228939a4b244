"""
Unit tests for apps/time_estimation/.

One-sided local drift and volatility fits, the semiparametric model with a
global elasticity, prediction-based bandwidth choice and the constancy GLR test.
"""

from __future__ import annotations

import numpy as np
import pytest

from apps.core.exceptions import ValidationError
from apps.sde.catalog import ModelSpec
from apps.sde.paths import SamplePath
from apps.simulation.plans import Scheme, SimPlan
from apps.simulation.services import simulate
from apps.smoothing.curves import PointStatus
from apps.smoothing.kernels import KernelShape, KernelSpec
from apps.time_estimation.services import (
    bandwidth_by_prediction,
    fit_drift_time,
    fit_semiparametric,
    fit_time_varying,
    fit_vol_time,
)
from apps.time_estimation.testing import glr_test_constancy

DAILY = 1.0 / 252.0


def one_sided(h: float) -> KernelSpec:
    return KernelSpec(KernelShape.ONE_SIDED_EPANECHNIKOV, h)


@pytest.fixture
def fast_vasicek_path(make_exact_path) -> SamplePath:
    """Daily Vasicek path with strong mean reversion, about 79 years."""
    return make_exact_path(ModelSpec.vasicek(kappa=5.0, alpha=0.06, sigma=0.02), DAILY, 20000, seed=7001)


@pytest.fixture
def fast_cir_path(make_exact_path) -> SamplePath:
    """Daily CIR path with strong mean reversion, about 79 years."""
    return make_exact_path(ModelSpec.cir(kappa=2.0, alpha=0.06, sigma=0.1), DAILY, 20000, seed=7002)


class TestTimeDomainDrift:
    """
    Tests for fit_drift_time.
    """

    def test_constant_coefficients_covered(self, make_exact_path):
        """
        GOAL: Verify 2-stderr bands cover constant drift coefficients.

        GUARANTEES:
          - Averaged over five paths, alpha1 = -kappa lies in the band at >= 85% of fit times
          - Averaged over five paths, alpha0 = kappa * alpha likewise
        """
        model = ModelSpec.vasicek(kappa=5.0, alpha=0.06, sigma=0.02)
        coverage0, coverage1 = [], []
        for seed in range(5):
            path = make_exact_path(model, DAILY, 20000, seed=8100 + seed)
            alpha0, alpha1 = fit_drift_time(path, one_sided(10.0))
            coverage0.append(np.mean(np.abs(alpha0.value - 0.3) <= 2 * alpha0.stderr))
            coverage1.append(np.mean(np.abs(alpha1.value + 5.0) <= 2 * alpha1.stderr))
        assert np.mean(coverage0) >= 0.85
        assert np.mean(coverage1) >= 0.85

    def test_empty_window_flagged(self, fast_vasicek_path):
        """
        GOAL: Verify a fit time before any completed transition has no value.

        GUARANTEES:
          - status empty, value NaN, mass 0
        """
        start = fast_vasicek_path.times[0]
        grid = [start + 0.5 * DAILY, start + 5.0]
        alpha0, alpha1 = fit_drift_time(fast_vasicek_path, one_sided(2.0), t_grid=grid)
        assert alpha0.status[0] == PointStatus.EMPTY.value
        assert np.isnan(alpha0.value[0]) and np.isnan(alpha1.value[0])
        assert alpha0.mass[0] == 0
        assert alpha0.status[1] == PointStatus.OK.value

    def test_uses_only_history(self, fast_vasicek_path):
        """
        GOAL: Verify the fit at t0 ignores every observation after t0.

        GUARANTEES:
          - Perturbing observations after t0 leaves the fit bit-identical
        """
        index = 12000
        t0 = fast_vasicek_path.times[index]
        grid = np.linspace(t0 - 20.0, t0, 15)
        values = np.array(fast_vasicek_path.values)
        values[index + 1 :] += 0.05 * np.sin(np.arange(values.size - index - 1))
        perturbed = fast_vasicek_path.with_values(values)

        base = fit_drift_time(fast_vasicek_path, one_sided(5.0), t_grid=grid)
        other = fit_drift_time(perturbed, one_sided(5.0), t_grid=grid)
        for a, b in zip(base, other):
            np.testing.assert_array_equal(a.value, b.value)
            np.testing.assert_array_equal(a.stderr, b.stderr)

    def test_regime_switch_tracked(self):
        """
        GOAL: Verify the local mean follows a mid-sample jump in alpha0.

        GUARANTEES:
          - The implied mean -alpha0/alpha1 is near 0.06 before the break and near 0.12 one bandwidth after
        """
        brk = 40.0
        model = ModelSpec.time_varying_ckls(
            alpha0=lambda t: np.where(np.asarray(t) < brk, 0.3, 0.6),
            alpha1=lambda t: -5.0 + 0 * np.asarray(t),
            beta0=lambda t: 0.02 + 0 * np.asarray(t),
            beta1=lambda t: 0 * np.asarray(t),
        )
        path = simulate(SimPlan(model=model, x0=0.06, delta=DAILY, n_steps=20000, seed=7003, scheme=Scheme.EULER))
        h = 5.0
        grid = [brk - 0.1, brk + h + 0.1]
        alpha0, alpha1 = fit_drift_time(path, one_sided(h), t_grid=grid)
        mean = -alpha0.value / alpha1.value
        assert mean[0] == pytest.approx(0.06, abs=0.02)
        assert mean[1] == pytest.approx(0.12, abs=0.02)

    def test_two_sided_kernel_rejected(self, fast_vasicek_path):
        """
        GOAL: Verify time-domain fits refuse kernels that look into the future.

        RAISES:
          ValidationError
        """
        with pytest.raises(ValidationError):
            fit_drift_time(fast_vasicek_path, KernelSpec(KernelShape.EPANECHNIKOV, 5.0))

    def test_short_path_rejected(self):
        """
        GOAL: Verify paths shorter than 50 observations are refused.

        RAISES:
          ValidationError
        """
        path = SamplePath(DAILY, np.linspace(0.05, 0.06, 30))
        with pytest.raises(ValidationError):
            fit_drift_time(path, one_sided(0.01))


class TestTimeDomainVolatility:
    """
    Tests for fit_vol_time.
    """

    def test_cir_elasticity_near_half(self, fast_cir_path):
        """
        GOAL: Verify local elasticities recover the square-root law.

        GUARANTEES:
          - Mean of beta1(t) over the grid within 0.15 of 0.5
          - Median beta0(t) within [0.07, 0.14] around sigma = 0.1
          - Every reliable point converged
        """
        kernel = one_sided(10.0)
        grid = np.linspace(15.0, fast_cir_path.times[-1], 30)
        drift = fit_drift_time(fast_cir_path, kernel, t_grid=grid)
        beta0, beta1 = fit_vol_time(fast_cir_path, drift, kernel, t_grid=grid)
        assert np.nanmean(beta1.value) == pytest.approx(0.5, abs=0.15)
        assert 0.07 <= np.nanmedian(beta0.value) <= 0.14
        assert not np.any(beta1.status == PointStatus.NOT_CONVERGED.value)

    def test_constant_states_degenerate(self, rng):
        """
        GOAL: Verify a window where every state is equal flags beta1 as unidentified.

        GUARANTEES:
          - beta1 status degenerate with NaN value; beta0 still positive
        """
        values = np.concatenate([np.ones(80), 1.0 + np.abs(rng.normal(0.0, 0.05, 200))])
        path = SamplePath(DAILY, values)
        grid = [path.times[70], path.times[-1]]
        kernel = one_sided(60 * DAILY)
        drift = fit_drift_time(path, kernel, t_grid=grid)
        beta0, beta1 = fit_vol_time(path, drift, kernel, t_grid=grid)
        assert beta1.status[0] == PointStatus.DEGENERATE.value
        assert np.isnan(beta1.value[0])
        assert beta0.value[0] >= 0

    def test_non_positive_path_rejected(self, fast_vasicek_path):
        """
        GOAL: Verify the power-law volatility fit needs positive data.

        RAISES:
          ValidationError
        """
        shifted = fast_vasicek_path.with_values(np.asarray(fast_vasicek_path.values) - 0.06)
        drift = fit_drift_time(shifted, one_sided(10.0))
        with pytest.raises(ValidationError):
            fit_vol_time(shifted, drift, one_sided(10.0))

    def test_combined_fit_has_loglik(self, fast_cir_path):
        """
        GOAL: Verify fit_time_varying assembles all four curves on one grid.

        GUARANTEES:
          - Shared t_grid, finite log-likelihood, positive beta0
        """
        grid = np.linspace(15.0, fast_cir_path.times[-1], 10)
        fit = fit_time_varying(fast_cir_path, one_sided(10.0), t_grid=grid)
        for curve in (fit.alpha0, fit.alpha1, fit.beta0, fit.beta1):
            np.testing.assert_array_equal(curve.grid, grid)
        assert np.isfinite(fit.loglik)
        assert np.all(fit.beta0.value > 0)

    def test_frozen_beta1_matches_joint_fit(self, fast_cir_path):
        """
        GOAL: Verify holding beta1 at its joint estimate reproduces the joint beta0.

        GUARANTEES:
          - beta0 within 1e-4 relative at every reliable fit time; beta1 echoed with stderr 0
        """
        kernel = one_sided(10.0)
        grid = np.linspace(15.0, fast_cir_path.times[-1], 12)
        drift = fit_drift_time(fast_cir_path, kernel, t_grid=grid)
        beta0, beta1 = fit_vol_time(fast_cir_path, drift, kernel, t_grid=grid)
        fixed0, fixed1 = fit_vol_time(fast_cir_path, drift, kernel, t_grid=grid, beta1=beta1.value)
        ok = beta0.status == PointStatus.OK.value
        np.testing.assert_allclose(fixed0.value[ok], beta0.value[ok], rtol=1e-4)
        np.testing.assert_array_equal(fixed1.value[ok], beta1.value[ok])
        assert np.all(fixed1.stderr[ok] == 0.0)

    @pytest.mark.slow
    def test_beta0_scale_equivariance_with_beta1_frozen(self, fast_cir_path):
        """
        GOAL: Verify multiplying the path by c multiplies beta0(t) by c^(1 - beta1(t)).

        GUARANTEES:
          - With beta1 held at the original estimates, the identity holds to 1e-9 relative
        """
        c = 3.0
        kernel = one_sided(10.0)
        grid = np.linspace(15.0, fast_cir_path.times[-1], 20)
        drift = fit_drift_time(fast_cir_path, kernel, t_grid=grid)
        beta0, beta1 = fit_vol_time(fast_cir_path, drift, kernel, t_grid=grid)

        scaled = fast_cir_path.with_values(c * np.asarray(fast_cir_path.values))
        scaled_drift = fit_drift_time(scaled, kernel, t_grid=grid)
        scaled0, _ = fit_vol_time(scaled, scaled_drift, kernel, t_grid=grid, beta1=beta1.value)

        ok = np.isfinite(beta1.value) & (beta0.status == PointStatus.OK.value)
        assert ok.sum() >= 15
        np.testing.assert_allclose(scaled0.value[ok], c ** (1.0 - beta1.value[ok]) * beta0.value[ok], rtol=1e-9)

    def test_frozen_beta1_length_checked(self, fast_cir_path):
        grid = np.linspace(15.0, fast_cir_path.times[-1], 5)
        drift = fit_drift_time(fast_cir_path, one_sided(10.0), t_grid=grid)
        with pytest.raises(ValidationError):
            fit_vol_time(fast_cir_path, drift, one_sided(10.0), t_grid=grid, beta1=[0.5, 0.5])


class TestSemiparametricFit:
    """
    Tests for fit_semiparametric.
    """

    def test_cir_global_elasticity(self, fast_cir_path):
        """
        GOAL: Verify the profile likelihood recovers beta = 0.5 on CIR data.

        GUARANTEES:
          - beta within 0.15 of 0.5 with a finite standard error
          - Profile at 0.5 beats the profile at 0.0 and 1.0
          - beta1 curve is constant
        """
        grid = np.linspace(15.0, fast_cir_path.times[-1], 40)
        fit = fit_semiparametric(fast_cir_path, one_sided(10.0), t_grid=grid)
        beta = fit.diagnostics["beta"]
        assert beta == pytest.approx(0.5, abs=0.15)
        assert np.isfinite(fit.diagnostics["beta_se"])
        profile = fit.diagnostics["profile"]
        assert profile[0.5] >= profile[0.0]
        assert profile[0.5] >= profile[1.0]
        assert np.all(fit.beta1.value == beta)
        assert np.all(fit.beta0.value > 0)

    def test_vasicek_elasticity_near_zero(self, fast_vasicek_path):
        """
        GOAL: Verify constant volatility data gives beta near 0.

        GUARANTEES:
          - beta within 0.15 of 0; alpha1 negative
        """
        grid = np.linspace(15.0, fast_vasicek_path.times[-1], 40)
        fit = fit_semiparametric(fast_vasicek_path, one_sided(10.0), t_grid=grid)
        assert fit.diagnostics["beta"] == pytest.approx(0.0, abs=0.15)
        assert fit.diagnostics["alpha1"] < 0


class TestBandwidthByPrediction:
    """
    Tests for bandwidth_by_prediction.
    """

    def test_single_candidate_returned(self, fast_vasicek_path):
        """
        GOAL: Verify a single candidate is returned without fitting.
        """
        assert bandwidth_by_prediction(fast_vasicek_path, one_sided(1.0), [3.5]) == 3.5

    def test_constant_coefficients_prefer_widest(self, fast_vasicek_path):
        """
        GOAL: Verify constant coefficients favour the widest window.

        GUARANTEES:
          - Selected bandwidth is the largest candidate
        """
        chosen = bandwidth_by_prediction(fast_vasicek_path, one_sided(1.0), [0.5, 3.0, 12.0])
        assert chosen == 12.0

    def test_empty_candidates_rejected(self, fast_vasicek_path):
        """
        GOAL: Verify an empty candidate set is refused.

        RAISES:
          ValidationError
        """
        with pytest.raises(ValidationError):
            bandwidth_by_prediction(fast_vasicek_path, one_sided(1.0), [])


class TestConstancyTest:
    """
    Tests for glr_test_constancy.
    """

    @pytest.fixture
    def short_cir_path(self, make_exact_path) -> SamplePath:
        return make_exact_path(ModelSpec.cir(kappa=2.0, alpha=0.06, sigma=0.1), DAILY, 2000, seed=7004)

    def test_deterministic(self, short_cir_path, settings):
        """
        GOAL: Verify identical inputs give identical results at any thread count.

        GUARANTEES:
          - Same statistic and p-value serially and on three threads
          - p-value in [0, 1]; replicate count echoed
        """
        grid = np.linspace(3.0, short_cir_path.times[-1], 12)
        first = glr_test_constancy(short_cir_path, h=2.0, n_boot=4, seed=99, t_grid=grid)
        settings.DIFFLAB_THREADS = 3
        second = glr_test_constancy(short_cir_path, h=2.0, n_boot=4, seed=99, t_grid=grid)
        assert first.statistic == second.statistic
        assert first.p_value == second.p_value
        assert 0.0 <= first.p_value <= 1.0
        assert first.n_boot == 4
        assert first.test == "glr_constancy"

    def test_non_positive_path_rejected(self, fast_vasicek_path):
        """
        GOAL: Verify the constancy test needs positive data.

        RAISES:
          ValidationError
        """
        shifted = fast_vasicek_path.with_values(np.asarray(fast_vasicek_path.values) - 0.06)
        with pytest.raises(ValidationError):
            glr_test_constancy(shifted, h=5.0, n_boot=2)

    @pytest.mark.slow
    def test_detects_volatility_doubling(self):
        """
        GOAL: Verify a mid-sample doubling of beta0 is rejected at 5%.

        GUARANTEES:
          - p-value < 0.05 with 99 replicates, n = 5000
        """
        brk = 10.0
        model = ModelSpec.time_varying_ckls(
            alpha0=lambda t: 0.12 + 0 * np.asarray(t),
            alpha1=lambda t: -2.0 + 0 * np.asarray(t),
            beta0=lambda t: np.where(np.asarray(t) < brk, 0.1, 0.2),
            beta1=lambda t: 0.5 + 0 * np.asarray(t),
        )
        path = simulate(SimPlan(model=model, x0=0.06, delta=DAILY, n_steps=5000, seed=7005, scheme=Scheme.EULER))
        grid = np.linspace(3.0, path.times[-1], 30)
        result = glr_test_constancy(path, h=2.0, n_boot=99, seed=5, t_grid=grid)
        assert result.statistic > 0
        assert result.p_value < 0.05

    @pytest.mark.slow
    def test_size_under_constant_coefficients(self, replication_seeds, rejection_rate):
        """
        GOAL: Verify the constancy test holds its level on constant-coefficient CKLS data.

        GUARANTEES:
          - Rejection rate at 5% in [2%, 9%] over 200 replications, n = 5000
        """
        model = ModelSpec.time_varying_ckls(
            alpha0=lambda t: 0.12 + 0 * np.asarray(t),
            alpha1=lambda t: -2.0 + 0 * np.asarray(t),
            beta0=lambda t: 0.1 + 0 * np.asarray(t),
            beta1=lambda t: 0.5 + 0 * np.asarray(t),
        )

        def run(seed: int):
            path = simulate(SimPlan(model=model, x0=0.06, delta=DAILY, n_steps=5000, seed=seed, scheme=Scheme.EULER))
            grid = np.linspace(3.0, path.times[-1], 30)
            return glr_test_constancy(path, h=2.0, n_boot=39, seed=seed, t_grid=grid)

        rate = rejection_rate(run, replication_seeds(8101, 200))
        assert 0.02 <= rate <= 0.09
