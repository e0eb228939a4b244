"""
Unit tests for apps/sde/.

Model catalogue validation, checked coefficient evaluation, invariant
densities and closed-form transition laws.
"""

from __future__ import annotations

import logging
import math

import numpy as np
import pytest
from scipy import integrate

from apps.core.exceptions import DomainError, UnsupportedModelError, ValidationError
from apps.sde.catalog import Family, ModelSpec
from apps.sde.paths import SamplePath, increments
from apps.sde.services import (
    evaluate_coefficients,
    invariant_density,
    normalizing_constant,
    stationary_moments,
    support_from_data,
    transition_cdf,
    transition_density,
    transition_moments,
)


class TestModelSpec:
    """
    Tests for ModelSpec construction and coefficients.
    """

    def test_cir_feller_index(self, cir_model):
        """
        GOAL: Verify the Feller index is exposed for CIR models.

        GUARANTEES:
          - q = 2 kappa alpha / sigma^2 - 1
          - Chapman-Pearson parameters satisfy the Feller condition
        """
        expected = 2 * 0.21459 * 0.08571 / 0.07830**2 - 1
        assert cir_model.feller_index == pytest.approx(expected)
        assert cir_model.is_feller

    def test_non_feller_cir_logs_warning(self, caplog):
        """
        GOAL: Verify a non-Feller CIR model is accepted but flagged in the log.

        GUARANTEES:
          - A warning naming the Feller condition is logged
        """
        with caplog.at_level(logging.WARNING, logger="apps.sde.catalog"):
            model = ModelSpec.cir(kappa=0.1, alpha=0.01, sigma=0.2)
        assert not model.is_feller
        assert "Feller" in caplog.text

    @pytest.mark.parametrize(
        "builder",
        [
            lambda: ModelSpec.vasicek(kappa=0.5, alpha=0.06, sigma=0.0),
            lambda: ModelSpec.vasicek(kappa=-0.5, alpha=0.06, sigma=0.02),
            lambda: ModelSpec.cir(kappa=0.5, alpha=0.06, sigma=-0.1),
            lambda: ModelSpec.gbm(mu=float("nan"), sigma=0.2),
        ],
    )
    def test_invalid_parameters_rejected(self, builder):
        """
        GOAL: Verify scale and mean-reversion constraints are enforced.

        GUARANTEES:
          - ValidationError for sigma <= 0, kappa <= 0 or non-finite values
        """
        with pytest.raises(ValidationError):
            builder()

    def test_from_parameters_rejects_unknown_names(self):
        """
        GOAL: Verify from_parameters validates parameter names.

        GUARANTEES:
          - Unknown names raise ValidationError
          - Known names build the family
        """
        with pytest.raises(ValidationError):
            ModelSpec.from_parameters("cir", {"kappa": 0.2, "alpha": 0.08, "sigma": 0.07, "rho": 1.0})
        model = ModelSpec.from_parameters("ckls", {"kappa": 0.2, "alpha": 0.08, "sigma": 0.07, "gamma": 0.7})
        assert model.family is Family.CKLS

    def test_time_varying_requires_curves(self):
        """
        GOAL: Verify time-varying families need all coefficient curves.

        GUARANTEES:
          - Missing curves raise ValidationError
        """
        with pytest.raises(ValidationError):
            ModelSpec(Family.TIME_VARYING_CKLS, curves={"alpha0": lambda t: t})

    def test_risk_neutral_replaces_drift(self, cir_model):
        """
        GOAL: Verify risk-neutral models drift at r * x with the same diffusion.

        GUARANTEES:
          - drift = r x; diffusion unchanged; no invariant density
        """
        rn = cir_model.risk_neutral(0.03)
        x = np.array([0.05, 0.1])
        np.testing.assert_allclose(rn.drift(0.0, x), 0.03 * x)
        np.testing.assert_array_equal(rn.diffusion(0.0, x), cir_model.diffusion(0.0, x))
        assert not rn.is_stationary


class TestEvaluateCoefficients:
    """
    Tests for evaluate_coefficients.
    """

    def test_vasicek_at_mean_level(self, vasicek_model):
        """
        GOAL: Verify Vasicek drift vanishes at the mean level.

        GUARANTEES:
          - drift 0 and diffusion sigma at x = alpha
        """
        drift, diffusion = evaluate_coefficients(vasicek_model, 0.0, 0.06)
        assert drift == 0.0
        assert diffusion == pytest.approx(0.02)

    def test_cir_at_mean_level(self, cir_model):
        """
        GOAL: Verify CIR coefficients at x = alpha.

        GUARANTEES:
          - drift 0 and diffusion sigma sqrt(alpha)
        """
        drift, diffusion = evaluate_coefficients(cir_model, 0.0, 0.08571)
        assert drift == 0.0
        assert diffusion == pytest.approx(0.07830 * math.sqrt(0.08571))

    def test_ckls_half_equals_cir(self, cir_model):
        """
        GOAL: Verify CKLS with gamma = 0.5 nests CIR exactly.

        GUARANTEES:
          - Bit-identical drift and diffusion on a grid
        """
        ckls = ModelSpec.ckls(kappa=0.21459, alpha=0.08571, sigma=0.07830, gamma=0.5)
        x = np.linspace(0.001, 0.3, 101)
        drift_a, diff_a = evaluate_coefficients(ckls, 1.0, x)
        drift_b, diff_b = evaluate_coefficients(cir_model, 1.0, x)
        np.testing.assert_array_equal(drift_a, drift_b)
        np.testing.assert_array_equal(diff_a, diff_b)

    def test_domain_violation(self, cir_model):
        """
        GOAL: Verify positive-domain families reject x <= 0.

        GUARANTEES:
          - DomainError with DOMAIN_ERROR code
        """
        with pytest.raises(DomainError) as exc_info:
            evaluate_coefficients(cir_model, 0.0, np.array([0.05, 0.0]))
        assert exc_info.value.error_code == "DOMAIN_ERROR"

    def test_time_varying_uses_time(self):
        """
        GOAL: Verify time-varying curves are evaluated at t.

        GUARANTEES:
          - drift = alpha0(t) + alpha1(t) x; diffusion = beta0(t) x^beta1(t)
        """
        model = ModelSpec.time_varying_ckls(
            alpha0=lambda t: 0.01 * (1 + t),
            alpha1=lambda t: -0.2 + 0 * t,
            beta0=lambda t: 0.1 + 0 * t,
            beta1=lambda t: 0.5 + 0 * t,
        )
        drift, diffusion = evaluate_coefficients(model, 2.0, 0.04)
        assert drift == pytest.approx(0.03 - 0.2 * 0.04)
        assert diffusion == pytest.approx(0.1 * 0.2)


class TestInvariantDensity:
    """
    Tests for invariant_density and stationary_moments.
    """

    def test_vasicek_gaussian(self, vasicek_model):
        """
        GOAL: Verify the Vasicek invariant law is Normal(alpha, sigma^2 / 2 kappa).

        GUARANTEES:
          - mode at alpha; stationary variance 4e-4
        """
        grid = np.linspace(0.0, 0.12, 1201)
        density = invariant_density(vasicek_model, grid)
        assert grid[np.argmax(density)] == pytest.approx(0.06)
        mean, variance = stationary_moments(vasicek_model)
        assert mean == 0.06
        assert variance == pytest.approx(4e-4)

    def test_cir_gamma_mean(self, cir_model):
        """
        GOAL: Verify the CIR invariant Gamma law has mean alpha.

        GUARANTEES:
          - Quadrature of x f(x) over (0, inf) equals alpha
          - Density is 0 at x <= 0
        """
        mean, _ = integrate.quad(lambda u: u * invariant_density(cir_model, u), 0.0, 1.0, points=[0.08571])
        assert mean == pytest.approx(0.08571, rel=1e-6)
        assert invariant_density(cir_model, 0.0) == 0.0
        assert invariant_density(cir_model, -0.1) == 0.0

    def test_generic_matches_vasicek_closed_form(self, vasicek_model):
        """
        GOAL: Verify the quadrature-based density agrees with the closed form.

        GUARANTEES:
          - Pointwise agreement on alpha +- 4 sd within quadrature tolerance
        """
        generic = ModelSpec.generic(
            drift=lambda x: 0.5 * (0.06 - x),
            diffusion=lambda x: np.full_like(x, 0.02),
        )
        sd = 0.02
        grid = np.linspace(0.06 - 4 * sd, 0.06 + 4 * sd, 41)
        numeric = invariant_density(generic, grid, support=(0.06 - 8 * sd, 0.06 + 8 * sd))
        np.testing.assert_allclose(numeric, invariant_density(vasicek_model, grid), rtol=1e-6)

    def test_ckls_half_matches_cir_gamma(self, cir_model):
        """
        GOAL: Verify CKLS normalization through C0 reproduces the CIR Gamma density.

        GUARANTEES:
          - Agreement at gamma = 0.5 within quadrature tolerance
          - normalizing_constant is positive with a small error estimate
        """
        ckls = ModelSpec.ckls(kappa=0.21459, alpha=0.08571, sigma=0.07830, gamma=0.5)
        grid = np.linspace(0.02, 0.25, 24)
        np.testing.assert_allclose(invariant_density(ckls, grid), invariant_density(cir_model, grid), rtol=1e-6)
        c0, err = normalizing_constant(ckls)
        assert c0 > 0
        assert err < 1e-6 * c0

    def test_gbm_rejected(self, gbm_model):
        """
        GOAL: Verify non-stationary models have no invariant density.

        GUARANTEES:
          - UnsupportedModelError for GBM
        """
        with pytest.raises(UnsupportedModelError):
            invariant_density(gbm_model, 1.0)

    def test_generic_needs_finite_support(self):
        """
        GOAL: Verify generic quadrature refuses an infinite domain.

        GUARANTEES:
          - ValidationError without a support; support_from_data widens the data range
        """
        generic = ModelSpec.generic(drift=lambda x: -x, diffusion=lambda x: np.ones_like(x))
        with pytest.raises(ValidationError):
            invariant_density(generic, 0.0)
        lower, upper = support_from_data([-1.0, 0.0, 1.0])
        assert (lower, upper) == pytest.approx((-1.4, 1.4))
        assert support_from_data([0.01, 0.05], positive=True)[0] == pytest.approx(0.002)


class TestTransitionLaws:
    """
    Tests for transition_density, transition_cdf and transition_moments.
    """

    def test_vasicek_fixed_point_mean(self, vasicek_model):
        """
        GOAL: Verify x0 = alpha is a fixed point of the conditional mean.

        GUARANTEES:
          - Conditional mean 0.06 at delta = 1
        """
        mean, variance = transition_moments(vasicek_model, 1.0, 0.06)
        assert mean == pytest.approx(0.06)
        assert variance == pytest.approx(0.02**2 * (1 - math.exp(-1.0)) / 1.0)

    @pytest.mark.parametrize("kappa,alpha,sigma,delta,x0", [
        (0.5, 0.06, 0.02, 1.0, 0.06),
        (2.0, -0.01, 0.3, 0.1, 0.2),
        (0.1, 0.03, 0.01, 1.0 / 52, 0.0),
    ])
    def test_vasicek_density_normalized(self, kappa, alpha, sigma, delta, x0):
        """
        GOAL: Verify the Vasicek transition density integrates to one.

        GUARANTEES:
          - Integral over y within 1e-8 of 1
        """
        model = ModelSpec.vasicek(kappa=kappa, alpha=alpha, sigma=sigma)
        mean, variance = transition_moments(model, delta, x0)
        sd = math.sqrt(variance)
        total, _ = integrate.quad(
            lambda y: transition_density(model, delta, x0, y), mean - 12 * sd, mean + 12 * sd, points=[mean]
        )
        assert total == pytest.approx(1.0, abs=1e-8)

    @pytest.mark.parametrize("delta,x0", [(1.0 / 12, 0.08), (1.0, 0.02), (5.0, 0.15)])
    def test_cir_density_matches_moments(self, cir_model, delta, x0):
        """
        GOAL: Verify the noncentral chi-square constants reproduce the CIR moments.

        GUARANTEES:
          - Density integrates to 1 within 1e-6
          - First two moments by quadrature equal transition_moments
        """
        mean, variance = transition_moments(cir_model, delta, x0)
        upper = mean + 30 * math.sqrt(variance)

        def moment(power: int) -> float:
            value, _ = integrate.quad(
                lambda y: y**power * transition_density(cir_model, delta, x0, y),
                0.0, upper, points=[mean], limit=200,
            )
            return value

        assert moment(0) == pytest.approx(1.0, abs=1e-6)
        assert moment(1) == pytest.approx(mean, rel=1e-6)
        assert moment(2) - moment(1) ** 2 == pytest.approx(variance, rel=1e-4)

    def test_cir_density_zero_below_origin(self, cir_model):
        """
        GOAL: Verify the open-interval boundary convention.

        GUARANTEES:
          - Density and CDF are 0 at y <= 0
        """
        assert transition_density(cir_model, 0.25, 0.05, 0.0) == 0.0
        assert transition_cdf(cir_model, 0.25, 0.05, -1.0) == 0.0

    def test_vasicek_long_horizon_is_invariant(self, vasicek_model):
        """
        GOAL: Verify the transition density forgets x0 at long horizons.

        GUARANTEES:
          - sup-norm distance to the invariant density < 1e-6 at kappa delta = 40
        """
        grid = np.linspace(0.0, 0.12, 241)
        long_run = transition_density(vasicek_model, 80.0, 0.11, grid)
        assert np.max(np.abs(long_run - invariant_density(vasicek_model, grid))) < 1e-6

    def test_gbm_lognormal(self, gbm_model):
        """
        GOAL: Verify the GBM transition law is lognormal with drift mu.

        GUARANTEES:
          - Median x0 exp((mu - sigma^2 / 2) delta)
          - Conditional mean x0 exp(mu delta)
        """
        median = 100 * math.exp((0.05 - 0.02) * 0.5)
        assert transition_cdf(gbm_model, 0.5, 100.0, median) == pytest.approx(0.5)
        mean, _ = transition_moments(gbm_model, 0.5, 100.0)
        assert mean == pytest.approx(100 * math.exp(0.025))

    def test_unsupported_family(self):
        """
        GOAL: Verify families without closed forms are refused explicitly.

        GUARANTEES:
          - UnsupportedModelError for CKLS
        """
        ckls = ModelSpec.ckls(kappa=0.2, alpha=0.08, sigma=0.1, gamma=0.8)
        with pytest.raises(UnsupportedModelError) as exc_info:
            transition_density(ckls, 0.1, 0.08, 0.09)
        assert exc_info.value.exit_code == 2


class TestSamplePath:
    """
    Tests for SamplePath and increments.
    """

    def test_validation(self):
        """
        GOAL: Verify construction invariants.

        GUARANTEES:
          - Short, non-finite or badly spaced input is rejected
          - values are read-only
        """
        with pytest.raises(ValidationError):
            SamplePath(0.1, np.array([1.0]))
        with pytest.raises(ValidationError):
            SamplePath(0.0, np.array([1.0, 2.0]))
        with pytest.raises(ValidationError):
            SamplePath(0.1, np.array([1.0, np.nan]))
        path = SamplePath(0.5, [1.0, 1.1])
        assert path.n == 1
        with pytest.raises(ValueError):
            path.values[0] = 3.0

    def test_excluded_transitions(self):
        """
        GOAL: Verify gap exclusions remove every pair that crosses them.

        GUARANTEES:
          - lag-1 pairs skip the excluded transition
          - lag-2 pairs skip both windows containing it
        """
        path = SamplePath(1.0, np.arange(6.0), excluded_transitions=(2,))
        x_prev, x_next = increments(path, 1)
        np.testing.assert_array_equal(x_prev, [0.0, 1.0, 3.0, 4.0])
        np.testing.assert_array_equal(x_next, [1.0, 2.0, 4.0, 5.0])
        x_prev2, _ = increments(path, 2)
        np.testing.assert_array_equal(x_prev2, [0.0, 3.0])
