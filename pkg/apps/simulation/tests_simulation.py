"""
Unit tests for apps/simulation/.

Plan validation, seed determinism, scheme relationships under shared shocks
and the exact samplers' laws.
"""

from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import integrate, stats

from apps.core.exceptions import UnsupportedModelError, ValidationError
from apps.sde.catalog import ModelSpec
from apps.sde.services import invariant_density
from apps.simulation.plans import Scheme, SimPlan
from apps.simulation.services import (
    compare_schemes,
    simulate,
    simulate_derivative_free,
    simulate_euler,
    simulate_exact,
    simulate_many,
    simulate_order_one,
)


class TestSimPlan:
    """
    Tests for SimPlan validation.
    """

    def test_exact_requires_closed_form_family(self):
        """
        GOAL: Verify the exact scheme is limited to GBM, Vasicek and CIR.

        GUARANTEES:
          - UnsupportedModelError for CKLS
        """
        ckls = ModelSpec.ckls(kappa=0.2, alpha=0.08, sigma=0.1, gamma=0.8)
        with pytest.raises(UnsupportedModelError):
            SimPlan(ckls, x0=0.08, delta=0.1, n_steps=10, scheme=Scheme.EXACT)

    def test_stationary_start_requires_stationary_model(self, gbm_model):
        """
        GOAL: Verify stationary starts are refused for non-stationary models.

        GUARANTEES:
          - UnsupportedModelError for GBM
        """
        with pytest.raises(UnsupportedModelError):
            SimPlan(gbm_model, x0="stationary", delta=0.1, n_steps=10)

    @pytest.mark.parametrize("kwargs", [
        {"n_steps": 0},
        {"substeps": 0},
        {"delta": -1.0},
        {"x0": -0.01},
    ])
    def test_invalid_sizes(self, cir_model, kwargs):
        """
        GOAL: Verify counts, step and start are validated.

        GUARANTEES:
          - ValidationError for each invalid field
        """
        base = {"x0": 0.05, "delta": 0.1, "n_steps": 10, "substeps": 1}
        base.update(kwargs)
        with pytest.raises(ValidationError):
            SimPlan(cir_model, **base)


class TestDeterminism:
    """
    Tests for the seed contract.
    """

    def test_same_plan_same_path(self, cir_model):
        """
        GOAL: Verify equal plans give bit-identical paths.

        GUARANTEES:
          - Two runs agree exactly; another seed differs
        """
        plan = SimPlan(cir_model, x0="stationary", delta=1 / 12, n_steps=500, seed=7)
        np.testing.assert_array_equal(simulate(plan).values, simulate(plan).values)
        other = SimPlan(cir_model, x0="stationary", delta=1 / 12, n_steps=500, seed=8)
        assert not np.array_equal(simulate(plan).values, simulate(other).values)

    @pytest.mark.parametrize("scheme", [Scheme.EULER, Scheme.EXACT])
    def test_many_matches_single_and_ignores_threads(self, cir_model, scheme):
        """
        GOAL: Verify simulate_many rows equal single-path simulations for any thread count.

        GUARANTEES:
          - row i == simulate(plan, i).values
          - 1 and 4 workers give identical matrices
        """
        plan = SimPlan(cir_model, x0=0.08, delta=1 / 12, n_steps=50, seed=11, scheme=scheme)
        serial = simulate_many(plan, 300, max_workers=1)
        threaded = simulate_many(plan, 300, max_workers=4)
        np.testing.assert_array_equal(serial, threaded)
        np.testing.assert_array_equal(serial[17], simulate(plan, 17).values)
        np.testing.assert_array_equal(serial[299], simulate(plan, 299).values)


class TestDiscretizationSchemes:
    """
    Tests for Euler, order-one and derivative-free schemes.
    """

    def test_zero_dynamics_constant_path(self):
        """
        GOAL: Verify a model with zero drift and diffusion stays at x0.

        GUARANTEES:
          - Every point equals x0 for all schemes
        """
        still = ModelSpec.generic(drift=lambda x: np.zeros_like(x), diffusion=lambda x: np.zeros_like(x))
        for scheme in (Scheme.EULER, Scheme.ORDER_ONE, Scheme.DERIVATIVE_FREE):
            path = simulate(SimPlan(still, x0=1.25, delta=0.1, n_steps=20, substeps=3, scheme=scheme))
            assert np.all(path.values == 1.25)

    def test_constant_sigma_order_one_equals_euler(self, vasicek_model):
        """
        GOAL: Verify the order-one correction vanishes for constant diffusion.

        GUARANTEES:
          - Order-one and derivative-free paths are bit-identical to Euler
        """
        plan = SimPlan(vasicek_model, x0=0.05, delta=1 / 52, n_steps=400, substeps=2, seed=3)
        euler = simulate_euler(plan).values
        np.testing.assert_array_equal(simulate_order_one(plan).values, euler)
        np.testing.assert_array_equal(simulate_derivative_free(plan).values, euler)

    def test_cir_euler_and_order_one_close(self, cir_model):
        """
        GOAL: Verify Euler and order-one CIR paths with shared shocks stay close.

        GUARANTEES:
          - 1000 monthly points: sup-norm gap is a few percent of the path mean at most
          - the gap is positive (the correction is active)
        """
        plan = SimPlan(cir_model, x0=0.08571, delta=1 / 12, n_steps=1000, seed=2024)
        result = compare_schemes(plan, Scheme.ORDER_ONE)
        assert 0 < result["relative"] < 0.05
        path = simulate_derivative_free(plan)
        assert np.all(path.values > 0)

    def test_gbm_order_one_strong_convergence(self, gbm_model):
        """
        GOAL: Verify the order-one scheme converges strongly at rate one for GBM.

        GUARANTEES:
          - log-log slope of mean endpoint error against step size within 1 +- 0.25
        """
        errors = []
        steps = []
        for substeps in (8, 16, 32, 64):
            plan = SimPlan(gbm_model, x0=100.0, delta=0.25, n_steps=1, substeps=substeps, seed=99, scheme=Scheme.ORDER_ONE)
            approx = simulate_many(plan, 2000)[:, -1]
            exact = simulate_many(SimPlan(gbm_model, 100.0, 0.25, 1, substeps, 99, Scheme.EXACT), 2000)[:, -1]
            errors.append(np.mean(np.abs(approx - exact)))
            steps.append(0.25 / substeps)
        slope = np.polyfit(np.log(steps), np.log(errors), 1)[0]
        assert 0.75 <= slope <= 1.25

    def test_reflection_keeps_cir_positive(self):
        """
        GOAL: Verify positivity breaches under Euler are reflected and counted.

        GUARANTEES:
          - All values >= 0 and diagnostics report reflections
        """
        harsh = ModelSpec.cir(kappa=0.5, alpha=0.01, sigma=0.5)
        path = simulate(SimPlan(harsh, x0=0.01, delta=0.25, n_steps=400, seed=5))
        assert np.all(path.values >= 0)
        assert path.diagnostics["reflections"] > 0

    def test_substeps_preserve_weak_mean(self, cir_model):
        """
        GOAL: Verify substep refinement leaves E[X_delta] unchanged up to Monte Carlo error.

        GUARANTEES:
          - M = 4 and M = 1 sample means agree within 4 standard errors
        """
        coarse = simulate_many(SimPlan(cir_model, 0.05, 1 / 12, 1, 1, 21), 20000)[:, -1]
        fine = simulate_many(SimPlan(cir_model, 0.05, 1 / 12, 1, 4, 21), 20000)[:, -1]
        se = math.sqrt(coarse.var() / coarse.size + fine.var() / fine.size)
        assert abs(coarse.mean() - fine.mean()) < 4 * se

    def test_ckls_stationary_start(self):
        """
        GOAL: Verify stationary starts for CKLS draw from the invariant law.

        GUARANTEES:
          - Initial states are positive and average to alpha within 4 standard errors
        """
        ckls = ModelSpec.ckls(kappa=0.3, alpha=0.08, sigma=0.2, gamma=0.8)
        starts = simulate_many(SimPlan(ckls, "stationary", 1 / 12, 1, seed=4), 2000)[:, 0]
        second, _ = integrate.quad(lambda u: u * u * invariant_density(ckls, u), 0.0, 1.2, points=[0.08], limit=200)
        sd = math.sqrt(second - 0.08**2)
        assert np.all(starts > 0)
        assert abs(starts.mean() - 0.08) < 4 * sd / math.sqrt(starts.size)


class TestExactSamplers:
    """
    Tests for exact transition-law sampling.
    """

    def test_vasicek_autocorrelation(self, vasicek_model):
        """
        GOAL: Verify the exact Vasicek sampler is an AR(1) with coefficient e^-kappa delta.

        GUARANTEES:
          - Lag-1 sample autocorrelation of 1e5 points within 0.01 of e^-0.5
        """
        path = simulate_exact(SimPlan(vasicek_model, "stationary", 1.0, 100_000, seed=31))
        x = path.values
        autocorr = np.corrcoef(x[:-1], x[1:])[0, 1]
        assert abs(autocorr - math.exp(-0.5)) < 0.01

    def test_cir_stationary_moments(self, cir_model):
        """
        GOAL: Verify the exact CIR sampler preserves the Gamma invariant law.

        GUARANTEES:
          - Cross-sectional mean within 4 SE of alpha
          - Cross-sectional variance within 4 SE of (q + 1) (sigma^2 / 2 kappa)^2
        """
        values = simulate_many(SimPlan(cir_model, "stationary", 1.0, 5, seed=41, scheme=Scheme.EXACT), 20000)[:, -1]
        scale = 0.07830**2 / (2 * 0.21459)
        shape = cir_model.feller_index + 1
        mean, variance = shape * scale, shape * scale**2
        n = values.size
        assert abs(values.mean() - mean) < 4 * math.sqrt(variance / n)
        # Gamma excess kurtosis is 6 / shape
        se_var = variance * math.sqrt((2 + 6 / shape) / n)
        assert abs(values.var(ddof=1) - variance) < 4 * se_var

    def test_gbm_log_increments_normal(self, gbm_model):
        """
        GOAL: Verify exact GBM log-increments are Gaussian.

        GUARANTEES:
          - |skewness| < 0.02 and |excess kurtosis| < 0.05 at 1e6 draws
        """
        path = simulate_exact(SimPlan(gbm_model, 100.0, 1 / 252, 1_000_000, seed=51))
        log_increments = np.diff(np.log(path.values))
        assert abs(stats.skew(log_increments)) < 0.02
        assert abs(stats.kurtosis(log_increments)) < 0.05

    def test_cir_exact_transition_moments(self, cir_model):
        """
        GOAL: Verify one-step exact CIR draws match the conditional moments.

        GUARANTEES:
          - Mean and variance within 4 Monte Carlo standard errors
        """
        from apps.sde.services import transition_moments

        draws = simulate_many(SimPlan(cir_model, 0.08, 1 / 12, 1, seed=61, scheme=Scheme.EXACT), 20000)[:, -1]
        mean, variance = transition_moments(cir_model, 1 / 12, 0.08)
        n = draws.size
        assert abs(draws.mean() - mean) < 4 * math.sqrt(variance / n)
        assert abs(draws.var(ddof=1) - variance) < 4 * variance * math.sqrt(2.5 / n)
