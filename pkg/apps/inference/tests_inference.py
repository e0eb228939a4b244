"""
Unit tests for apps/inference/.

Parametric fits are checked against closed forms (AR(1) regression, lognormal
increments) and simulated truth; the double-kernel surfaces against the closed-form
Vasicek transition law; the tests for determinism, shared index sets and p-value
granularity.
"""

from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import integrate, stats

from apps.core.exceptions import (
    DomainError,
    ExtrapolationError,
    NumericalError,
    UnsupportedModelError,
    ValidationError,
)
from apps.core.rng import spawn_seeds
from apps.inference.parametric import (
    fit_exact_mle,
    fit_gmm,
    fit_indirect,
    fit_pseudo_mle,
    invert_binding_map,
    moment_conditions,
    vasicek_ar1_estimates,
)
from apps.inference.specification import (
    block_resample,
    chapman_kolmogorov,
    distance_test,
    fit_minimum_distance,
    glr_transition_test,
    invariant_density_test,
    local_markov_resample,
    markov_test,
    minimize_cdf_distance,
    surface_distance,
)
from apps.inference.transition import (
    estimate_transition_density,
    estimate_transition_distribution,
    parametric_surface,
)
from apps.sde.catalog import ModelSpec
from apps.sde.paths import SamplePath
from apps.sde.services import transition_cdf, transition_density

WEEKLY = 1.0 / 52.0
CIR_PARAMS = {"kappa": 0.21459, "alpha": 0.08571, "sigma": 0.07830}
VASICEK_PARAMS = {"kappa": 0.5, "alpha": 0.06, "sigma": 0.02}


def within_stderr(fit, truth: dict, k: float = 4.0) -> bool:
    estimates, stderr = fit.as_dict(), fit.stderr_dict()
    return all(abs(estimates[name] - value) < k * stderr[name] for name, value in truth.items())


@pytest.fixture
def long_vasicek_path(make_exact_path, vasicek_model) -> SamplePath:
    """Weekly Vasicek path, 20000 transitions."""
    return make_exact_path(vasicek_model, WEEKLY, 20000, seed=31337)


@pytest.fixture
def short_vasicek_path(make_exact_path, vasicek_model) -> SamplePath:
    """Weekly Vasicek path, 400 transitions, for bootstrap plumbing."""
    return make_exact_path(vasicek_model, WEEKLY, 400, seed=4242)


class TestPseudoMLE:
    """
    Tests for fit_pseudo_mle.
    """

    def test_vasicek_is_conditional_least_squares(self, vasicek_path):
        """
        GOAL: Verify the Vasicek pseudo-MLE is the closed-form regression of increments on the level.

        GUARANTEES:
          - kappa = -slope / delta and alpha = -intercept / slope to round-off
          - sigma^2 delta equals the mean squared residual
        """
        fit = fit_pseudo_mle(vasicek_path, "vasicek")
        x, y = vasicek_path.values[:-1], vasicek_path.values[1:]
        slope, intercept = np.polyfit(x, y - x, 1)
        residuals = y - x - (intercept + slope * x)

        params = fit.as_dict()
        assert fit.method == "pseudo_mle"
        assert params["kappa"] == pytest.approx(-slope / WEEKLY, rel=1e-8)
        assert params["alpha"] == pytest.approx(-intercept / slope, rel=1e-8)
        assert params["sigma"] ** 2 * WEEKLY == pytest.approx(np.mean(residuals**2), rel=1e-8)
        assert fit.diagnostics["closed_form"] is True

    def test_vasicek_recovers_truth(self, vasicek_path):
        """
        GOAL: Verify estimates on exact weekly data lie near the generating parameters.

        GUARANTEES:
          - Every parameter within 4 standard errors of truth
        """
        assert within_stderr(fit_pseudo_mle(vasicek_path, "vasicek"), VASICEK_PARAMS)

    def test_gbm_closed_form(self, make_exact_path, gbm_model):
        """
        GOAL: Verify the GBM pseudo-MLE uses the simple returns.

        GUARANTEES:
          - mu = mean(R) / delta and sigma^2 = var(R) / delta with R = X_{i+1} / X_i - 1
        """
        path = make_exact_path(gbm_model, WEEKLY, 1000, seed=11, x0=1.0)
        returns = path.values[1:] / path.values[:-1] - 1.0

        params = fit_pseudo_mle(path, "gbm").as_dict()

        assert params["mu"] == pytest.approx(returns.mean() / WEEKLY, rel=1e-10)
        assert params["sigma"] == pytest.approx(math.sqrt(returns.var() / WEEKLY), rel=1e-10)

    def test_cir_numerical_fit(self, cir_weekly_path):
        """
        GOAL: Verify the numerical Euler likelihood fit for CIR.

        GUARANTEES:
          - Converges with finite positive standard errors
          - Estimates within 4 standard errors of truth
        """
        fit = fit_pseudo_mle(cir_weekly_path, "cir")

        assert fit.converged
        assert all(math.isfinite(se) and se > 0 for se in fit.stderr)
        assert within_stderr(fit, CIR_PARAMS)

    def test_zero_noise_flags_sigma_boundary(self):
        """
        GOAL: Verify a deterministic mean-reverting path puts sigma on the boundary.

        GUARANTEES:
          - diagnostics["boundary"] lists sigma
        """
        rho = math.exp(-0.5 * WEEKLY)
        values = 0.06 + 0.04 * rho ** np.arange(300)
        fit = fit_pseudo_mle(SamplePath(WEEKLY, values), "vasicek")

        assert "sigma" in fit.diagnostics["boundary"]
        assert fit.as_dict()["kappa"] == pytest.approx((1.0 - rho) / WEEKLY, rel=1e-6)

    def test_family_and_domain_checks(self, vasicek_path):
        """
        GOAL: Verify unsupported families and out-of-domain paths are refused.

        GUARANTEES:
          - generic -> UnsupportedModelError
          - CIR on a path with negative values -> DomainError
        """
        with pytest.raises(UnsupportedModelError):
            fit_pseudo_mle(vasicek_path, "generic")
        shifted = vasicek_path.with_values(vasicek_path.values - 0.06)
        with pytest.raises(DomainError):
            fit_pseudo_mle(shifted, "cir")


class TestExactMLE:
    """
    Tests for fit_exact_mle and vasicek_ar1_estimates.
    """

    def test_vasicek_matches_ar1_closed_form(self, vasicek_path):
        """
        GOAL: Verify the numerical exact MLE reproduces the AR(1) closed form.

        GUARANTEES:
          - Every parameter agrees within 1e-6
          - The log-likelihood is finite and standard errors are positive
        """
        fit = fit_exact_mle(vasicek_path, "vasicek")
        closed = vasicek_ar1_estimates(vasicek_path)

        for name, value in closed.items():
            assert fit.as_dict()[name] == pytest.approx(value, abs=1e-6)
        assert math.isfinite(fit.loglik)
        assert all(se > 0 for se in fit.stderr)

    @pytest.mark.parametrize(
        "start",
        [(0.25, 0.04, 0.01), (1.0, 0.08, 0.04), (0.5, 0.05, 0.03)],
    )
    def test_vasicek_start_invariance(self, vasicek_path, start):
        """
        GOAL: Verify the optimum does not depend on the initial parameters.

        GUARANTEES:
          - Same estimates as the closed form within 1e-5 from each start
        """
        fit = fit_exact_mle(vasicek_path, "vasicek", start=start)
        for name, value in vasicek_ar1_estimates(vasicek_path).items():
            assert fit.as_dict()[name] == pytest.approx(value, abs=1e-5)

    def test_gbm_matches_log_increments(self, make_exact_path, gbm_model):
        """
        GOAL: Verify the GBM MLE equals the lognormal sufficient-statistic formulas.

        GUARANTEES:
          - sigma^2 = var(r) / delta, mu = mean(r) / delta + sigma^2 / 2, r = log increments
        """
        path = make_exact_path(gbm_model, WEEKLY, 2000, seed=12, x0=1.0)
        r = np.diff(np.log(path.values))
        sigma2 = r.var() / WEEKLY

        params = fit_exact_mle(path, "gbm").as_dict()

        assert params["sigma"] == pytest.approx(math.sqrt(sigma2), rel=1e-5)
        assert params["mu"] == pytest.approx(r.mean() / WEEKLY + sigma2 / 2.0, rel=1e-5)

    def test_cir_recovers_truth(self, cir_path):
        """
        GOAL: Verify the CIR exact MLE on monthly data.

        GUARANTEES:
          - Estimates within 4 standard errors of the generating parameters
        """
        fit = fit_exact_mle(cir_path, "cir")
        assert fit.converged
        assert within_stderr(fit, CIR_PARAMS)

    def test_ckls_refused(self, cir_path):
        with pytest.raises(UnsupportedModelError):
            fit_exact_mle(cir_path, "ckls")

    def test_ar1_needs_mean_reversion(self):
        """
        GOAL: Verify an explosive series has no Vasicek closed form.

        GUARANTEES:
          - NumericalError when the AR(1) coefficient exceeds one
        """
        values = 1.01 ** np.arange(200) + 0.001 * np.sin(np.arange(200))
        with pytest.raises(NumericalError):
            vasicek_ar1_estimates(SamplePath(WEEKLY, values))


class TestGMM:
    """
    Tests for fit_gmm and moment_conditions.
    """

    def test_exactly_identified_moments_vanish(self, vasicek_path):
        """
        GOAL: Verify two moments for two free parameters are solved exactly.

        GUARANTEES:
          - |sample moments| < 1e-8 at the estimate
          - kappa is held fixed and reports a NaN standard error
        """
        fit = fit_gmm(vasicek_path, "vasicek", a_values=[5.0, 20.0])

        assert np.max(np.abs(fit.diagnostics["moments"])) < 1e-8
        assert fit.diagnostics["fixed"] == {"kappa": pytest.approx(fit.as_dict()["kappa"])}
        assert math.isnan(fit.stderr_dict()["kappa"])
        assert fit.diagnostics["sigma2_over_kappa"] == pytest.approx(
            fit.as_dict()["sigma"] ** 2 / fit.as_dict()["kappa"]
        )

    def test_cir_ratio_identified(self, make_exact_path):
        """
        GOAL: Verify sigma^2 / kappa is recovered on a long stationary CIR path.

        GUARANTEES:
          - Estimated sigma^2 / kappa within 10% of 0.005
          - The two-step weight is used when requested
          - Moment values at the generating parameters within 4 batch-mean standard errors of zero
        """
        truth = {"kappa": 2.0, "alpha": 0.06, "sigma": 0.1}
        path = make_exact_path(ModelSpec.cir(**truth), WEEKLY, 100_000, seed=5150)

        fit = fit_gmm(path, "cir", a_values=[10.0, 30.0, 60.0], two_step=True)
        mean, stderr = moment_conditions(path, "cir", truth, [10.0, 30.0, 60.0])

        assert fit.diagnostics["sigma2_over_kappa"] == pytest.approx(0.005, rel=0.1)
        assert fit.diagnostics["two_step"] is True
        assert np.all(np.abs(mean) < 4.0 * stderr)

    def test_input_checks(self, vasicek_path, make_exact_path, gbm_model):
        """
        GOAL: Verify invalid GMM requests are refused.

        GUARANTEES:
          - Fewer moments than free parameters -> ValidationError
          - Non-positive a -> ValidationError
          - GBM -> UnsupportedModelError
        """
        with pytest.raises(ValidationError):
            fit_gmm(vasicek_path, "vasicek", a_values=[5.0])
        with pytest.raises(ValidationError):
            fit_gmm(vasicek_path, "vasicek", a_values=[5.0, -1.0])
        with pytest.raises(UnsupportedModelError):
            fit_gmm(make_exact_path(gbm_model, WEEKLY, 500, seed=3, x0=1.0), "gbm", a_values=[1.0, 2.0])


class TestIndirectInference:
    """
    Tests for invert_binding_map and fit_indirect.
    """

    def test_calibrated_estimate_from_binding_map(self):
        """
        GOAL: Verify inversion at a node of the binding map.

        GUARANTEES:
          - Map value 3 at theta 2.080 -> calibrated 2.080 at observed 3
          - Positive slope for an increasing map
        """
        value, slope = invert_binding_map([1.0, 2.08, 3.0], [1.5, 3.0, 4.2], 3.0)
        assert value == pytest.approx(2.08)
        assert slope > 0

    def test_identity_map(self):
        grid = np.linspace(0.5, 3.0, 11)
        value, slope = invert_binding_map(grid, grid, 1.7)
        assert value == pytest.approx(1.7, abs=1e-12)
        assert slope == pytest.approx(1.0)

    def test_extrapolation_refused(self):
        """
        GOAL: Verify observed estimates outside the map are not extrapolated.

        GUARANTEES:
          - ExtrapolationError carrying the map range
        """
        with pytest.raises(ExtrapolationError) as excinfo:
            invert_binding_map([1.0, 2.0, 3.0], [1.5, 3.0, 4.2], 5.0)
        assert excinfo.value.details["range"] == [1.5, 4.2]

    def test_non_monotone_map_repaired(self):
        value, _ = invert_binding_map([1.0, 2.0, 3.0, 4.0], [1.0, 3.0, 2.5, 4.0], 3.5)
        assert 3.0 <= value <= 4.0

    def test_gbm_sigma_calibration(self, make_exact_path, gbm_model):
        """
        GOAL: Verify calibration where the pseudo estimator is nearly unbiased.

        GUARANTEES:
          - Calibrated sigma within 5% of the pseudo estimate
          - Uncalibrated mu keeps its pseudo estimate
          - The binding map is reported
        """
        path = make_exact_path(gbm_model, WEEKLY, 500, seed=77, x0=1.0)
        pseudo = fit_pseudo_mle(path, "gbm").as_dict()
        grid = pseudo["sigma"] * np.linspace(0.5, 1.5, 11)

        fit = fit_indirect(path, "gbm", n_sim=5, theta_grid={"sigma": grid}, seed=1)

        assert fit.method == "indirect"
        assert fit.as_dict()["sigma"] == pytest.approx(pseudo["sigma"], rel=0.05)
        assert fit.as_dict()["mu"] == pseudo["mu"]
        assert len(fit.diagnostics["binding"]["sigma"]["binding"]) == 11

    def test_dimension_limit(self, cir_path):
        with pytest.raises(UnsupportedModelError):
            fit_indirect(cir_path, "ckls")


def l1_rows(estimate, reference, y_grid):
    return integrate.trapezoid(np.abs(estimate - reference), y_grid, axis=1)


class TestTransitionDensity:
    """
    Tests for estimate_transition_density and estimate_transition_distribution.
    """

    def test_vasicek_oracle(self, long_vasicek_path, vasicek_model):
        """
        GOAL: Verify the double-kernel estimate against the closed-form Vasicek transition density.

        GUARANTEES:
          - Mean per-x L1 distance < 0.15 on the central x-grid
          - Central rows integrate to 1 within 3%
        """
        surface = estimate_transition_density(long_vasicek_path)
        low, high = np.quantile(long_vasicek_path.values, [0.2, 0.8])
        central = (surface.x_grid >= low) & (surface.x_grid <= high)
        truth = transition_density(vasicek_model, WEEKLY, surface.x_grid[:, None], surface.y_grid[None, :])

        distances = l1_rows(surface.density, truth, surface.y_grid)

        assert distances[central].mean() < 0.15
        assert np.all(np.abs(surface.integrals[central] - 1.0) < 0.03)
        assert np.all(surface.density >= 0)

    def test_independent_data_matches_marginal(self, rng):
        """
        GOAL: Verify the conditional density of i.i.d. data does not depend on x.

        GUARANTEES:
          - Mean per-x L1 distance to the marginal N(0, 1) < 0.15 on the central grid
        """
        path = SamplePath(1.0, rng.normal(size=5000))
        surface = estimate_transition_density(path, x_grid=np.linspace(-0.8, 0.8, 41))
        marginal = stats.norm.pdf(surface.y_grid)[None, :]

        distances = l1_rows(surface.density, marginal, surface.y_grid)

        assert distances.mean() < 0.15

    def test_affine_equivariance(self, vasicek_path):
        """
        GOAL: Verify density values follow an affine change of units exactly.

        GUARANTEES:
          - Rescaling data, grids and bandwidths by b divides the density by b
        """
        b, a = 10.0, 1.0
        xg = np.linspace(0.055, 0.065, 15)
        yg = np.linspace(0.04, 0.08, 60)
        base = estimate_transition_density(vasicek_path, 0.003, 0.001, xg, yg, truncation=(0.05, 0.07))
        moved = estimate_transition_density(
            vasicek_path.with_values(a + b * vasicek_path.values),
            0.003 * b,
            0.001 * b,
            a + b * xg,
            a + b * yg,
            truncation=(a + b * 0.05, a + b * 0.07),
        )
        np.testing.assert_allclose(moved.density, base.density / b, rtol=1e-7, atol=1e-12)

    def test_short_path_refused(self, rng):
        with pytest.raises(ValidationError):
            estimate_transition_density(SamplePath(1.0, rng.normal(size=50)))

    def test_distribution_rows(self, vasicek_path):
        """
        GOAL: Verify the conditional distribution surface.

        GUARANTEES:
          - Non-decreasing in y, within [0, 1], ending at 1
          - Pre-normalization totals on central rows within [0.9, 1.1]
        """
        density = estimate_transition_density(vasicek_path)
        cdf = estimate_transition_distribution(density)
        totals = np.asarray(cdf.diagnostics["final_before_normalization"])

        assert cdf.kind == "cdf"
        assert np.all(np.diff(cdf.density, axis=1) >= 0)
        assert np.all((cdf.density >= 0) & (cdf.density <= 1))
        np.testing.assert_allclose(cdf.density[:, -1], 1.0)
        assert np.all((totals[cdf.central] >= 0.9) & (totals[cdf.central] <= 1.1))
        with pytest.raises(ValidationError):
            estimate_transition_distribution(cdf)

    def test_distribution_vasicek_oracle(self, long_vasicek_path, vasicek_model):
        """
        GOAL: Verify the estimated conditional CDF against the closed form.

        GUARANTEES:
          - Sup-norm distance < 0.08 on the central x-grid
        """
        cdf = estimate_transition_distribution(estimate_transition_density(long_vasicek_path))
        low, high = np.quantile(long_vasicek_path.values, [0.2, 0.8])
        central = (cdf.x_grid >= low) & (cdf.x_grid <= high)
        truth = transition_cdf(vasicek_model, WEEKLY, cdf.x_grid[:, None], cdf.y_grid[None, :])

        assert np.max(np.abs(cdf.density - truth)[central]) < 0.08


class TestChapmanKolmogorov:
    """
    Tests for chapman_kolmogorov on closed-form densities.
    """

    def test_vasicek_two_step_composition(self, vasicek_model):
        """
        GOAL: Verify the quadrature composition of one-step densities gives the two-step density.

        GUARANTEES:
          - Maximum absolute discrepancy < 1e-3
        """
        x = np.linspace(0.055, 0.065, 11)
        y = np.linspace(0.05, 0.07, 41)
        z = np.linspace(0.0, 0.12, 4001)
        one_xz = transition_density(vasicek_model, WEEKLY, x[:, None], z[None, :])
        one_zy = transition_density(vasicek_model, WEEKLY, z[:, None], y[None, :])
        two = transition_density(vasicek_model, 2 * WEEKLY, x[:, None], y[None, :])

        composed = chapman_kolmogorov(one_xz, one_zy, z)

        assert np.max(np.abs(composed - two)) < 1e-3


class TestSpecificationTests:
    """
    Tests for the GLR, distance, Markov and invariant-density tests.
    """

    def test_surface_distance_to_itself(self, vasicek_model):
        surface = parametric_surface(
            vasicek_model, WEEKLY, np.linspace(0.05, 0.07, 9), np.linspace(0.04, 0.08, 50), (0.05, 0.07)
        )
        assert surface_distance(surface, surface) == 0.0

    def test_glr_shared_index_and_determinism(self, short_vasicek_path, settings):
        """
        GOAL: Verify the GLR statistic bookkeeping and reproducibility.

        GUARANTEES:
          - statistic equals the difference of the reported log-likelihoods
          - Same result with one and three threads
          - p-value on the 1 / (n_boot + 1) lattice
        """
        first = glr_transition_test(short_vasicek_path, "vasicek", n_boot=4, seed=9)
        settings.DIFFLAB_THREADS = 3
        second = glr_transition_test(short_vasicek_path, "vasicek", n_boot=4, seed=9)

        d = first.diagnostics
        assert first.test == "glr_transition"
        assert first.statistic == d["loglik_nonparametric"] - d["loglik_parametric"]
        assert d["n_evaluated"] > 0
        assert first.statistic == second.statistic
        assert first.p_value == second.p_value
        valid = first.n_boot - first.n_failed
        assert (first.p_value * (valid + 1)) == pytest.approx(round(first.p_value * (valid + 1)))

    def test_glr_needs_closed_form(self, cir_path):
        with pytest.raises(UnsupportedModelError):
            glr_transition_test(cir_path, "ckls", n_boot=2)

    @pytest.mark.parametrize("norm", ["L2_density", "L2_cdf"])
    def test_distance_test_runs(self, short_vasicek_path, norm):
        """
        GOAL: Verify the distance test for both norms.

        GUARANTEES:
          - Non-negative statistic, p-value in [0, 1], norm recorded
        """
        result = distance_test(short_vasicek_path, "vasicek", norm=norm, n_boot=3, seed=2)

        assert result.statistic >= 0
        assert 0.0 <= result.p_value <= 1.0
        assert result.diagnostics["norm"] == norm

    def test_distance_unknown_norm(self, short_vasicek_path):
        with pytest.raises(ValidationError):
            distance_test(short_vasicek_path, "vasicek", norm="sup", n_boot=2)

    def test_markov_test_deterministic(self, short_vasicek_path):
        """
        GOAL: Verify the Markov test is reproducible with either resampler.

        GUARANTEES:
          - Equal results for equal seeds
          - Non-negative statistic
        """
        grid = np.linspace(0.055, 0.065, 25)
        for resampler in ("local_markov", "block"):
            a = markov_test(short_vasicek_path, grid=grid, n_boot=3, seed=4, resampler=resampler)
            b = markov_test(short_vasicek_path, grid=grid, n_boot=3, seed=4, resampler=resampler)
            assert a.statistic == b.statistic >= 0
            assert a.p_value == b.p_value
            assert a.diagnostics["resampler"] == resampler

    def test_markov_defaults_to_block_bootstrap(self, short_vasicek_path):
        grid = np.linspace(0.055, 0.065, 25)
        default = markov_test(short_vasicek_path, grid=grid, n_boot=3, seed=6)
        block = markov_test(short_vasicek_path, grid=grid, n_boot=3, seed=6, resampler="block")
        assert default.diagnostics["resampler"] == "block"
        assert default.p_value == block.p_value

    def test_markov_unknown_resampler(self, short_vasicek_path):
        with pytest.raises(ValidationError):
            markov_test(short_vasicek_path, n_boot=2, resampler="stationary")

    def test_resamplers_reuse_observed_states(self, short_vasicek_path):
        """
        GOAL: Verify both resamplers only emit observed values.

        GUARANTEES:
          - Same length as the input; every value is an observation
        """
        generator = np.random.default_rng(0)
        local = local_markov_resample(short_vasicek_path, 0.002, generator)
        block = block_resample(short_vasicek_path, generator)

        for sample in (local, block):
            assert sample.values.size == short_vasicek_path.values.size
            assert np.all(np.isin(sample.values, short_vasicek_path.values))

    def test_invariant_density_test(self, short_vasicek_path, make_exact_path, gbm_model):
        """
        GOAL: Verify the invariant-density test and its family check.

        GUARANTEES:
          - Non-negative statistic with a p-value
          - GBM -> UnsupportedModelError
        """
        result = invariant_density_test(short_vasicek_path, "vasicek", n_boot=3, seed=8)
        assert result.test == "invariant_density"
        assert result.statistic >= 0
        assert 0.0 <= result.p_value <= 1.0
        with pytest.raises(UnsupportedModelError):
            invariant_density_test(make_exact_path(gbm_model, WEEKLY, 300, seed=1, x0=1.0), "gbm", n_boot=2)


class TestMinimumDistance:
    """
    Tests for minimize_cdf_distance and fit_minimum_distance.
    """

    def test_noise_free_surface_recovers_parameters(self):
        """
        GOAL: Verify the minimum is the generating model when the target is exact.

        GUARANTEES:
          - Every parameter within 0.1% of truth from a perturbed start
        """
        truth = {"kappa": 0.5, "alpha": 0.06, "sigma": 0.02}
        model = ModelSpec.vasicek(**truth)
        target = parametric_surface(
            model, 0.25, np.linspace(0.045, 0.075, 21), np.linspace(0.02, 0.10, 161), (0.045, 0.075), kind="cdf"
        )

        fit = minimize_cdf_distance(target, "vasicek", start=[0.4, 0.065, 0.025])

        assert fit.method == "minimum_distance"
        for name, value in truth.items():
            assert fit.as_dict()[name] == pytest.approx(value, rel=1e-3)

    def test_fit_without_bootstrap(self, short_vasicek_path):
        """
        GOAL: Verify the path-level estimator without bootstrap replicates.

        GUARANTEES:
          - Finite estimates, NaN standard errors, bandwidths recorded
        """
        fit = fit_minimum_distance(short_vasicek_path, "vasicek")

        assert all(math.isfinite(v) for v in fit.estimates)
        assert all(math.isnan(se) for se in fit.stderr)
        assert fit.diagnostics["h1"] > 0 and fit.diagnostics["h2"] > 0

    def test_sweep_needs_bootstrap(self, short_vasicek_path):
        with pytest.raises(ValidationError):
            fit_minimum_distance(short_vasicek_path, "vasicek", bandwidth_factors=(0.5, 1.0))


@pytest.mark.slow
class TestRejectionRates:
    """
    Size and power of the bootstrap specification and Markov tests on simulated data.

    Each replication draws a fresh path from its own seed; 39 bootstrap replicates put
    the 5% critical value exactly on an attainable p-value.
    """

    MONTHLY = 1.0 / 12.0
    N_BOOT = 39

    @pytest.fixture
    def cir_sample(self, make_exact_path, cir_model):
        return lambda seed, n=2000: make_exact_path(cir_model, self.MONTHLY, n, seed=seed)

    @pytest.mark.parametrize("test", [glr_transition_test, distance_test])
    def test_size_under_true_family(self, test, cir_sample, replication_seeds, rejection_rate):
        """
        GOAL: Verify CIR data tested against the CIR null rejects at about the nominal rate.

        GUARANTEES:
          - Rejection rate at 5% in [2%, 9%] over 200 replications, n = 2000
        """
        rate = rejection_rate(
            lambda seed: test(cir_sample(seed), "cir", n_boot=self.N_BOOT, seed=seed),
            replication_seeds(9101, 200),
        )
        assert 0.02 <= rate <= 0.09

    @pytest.mark.parametrize("test", [glr_transition_test, distance_test])
    def test_power_against_vasicek_null(self, test, cir_sample, replication_seeds, rejection_rate):
        """
        GOAL: Verify level-dependent volatility is detected against a Vasicek null.

        GUARANTEES:
          - Rejection rate at 5% >= 80% over 50 replications, n = 2000
        """
        rate = rejection_rate(
            lambda seed: test(cir_sample(seed), "vasicek", n_boot=self.N_BOOT, seed=seed),
            replication_seeds(9102, 50),
        )
        assert rate >= 0.8

    def test_markov_level_on_cir(self, cir_sample, replication_seeds, rejection_rate):
        """
        GOAL: Verify the Markov test holds its level on Markov data.

        GUARANTEES:
          - Rejection rate at 5% in [2%, 10%] over 100 replications, n = 2000
        """
        rate = rejection_rate(
            lambda seed: markov_test(cir_sample(seed), n_boot=self.N_BOOT, seed=seed),
            replication_seeds(9103, 100),
        )
        assert 0.02 <= rate <= 0.10

    def test_markov_power_on_sum_of_two_ou(self, make_exact_path, replication_seeds, rejection_rate):
        """
        GOAL: Verify the sum of a slow and a fast Ornstein-Uhlenbeck process is found non-Markov.

        GUARANTEES:
          - Rejection rate at 5% >= 60% over 50 replications, n = 5000 weekly
        """
        slow = ModelSpec.vasicek(kappa=0.5, alpha=0.03, sigma=0.02)
        fast = ModelSpec.vasicek(kappa=26.0, alpha=0.03, sigma=0.144)

        def run(seed: int):
            first, second = spawn_seeds(seed, 2)
            a = make_exact_path(slow, WEEKLY, 5000, seed=first)
            b = make_exact_path(fast, WEEKLY, 5000, seed=second)
            observed = SamplePath(WEEKLY, np.asarray(a.values) + np.asarray(b.values))
            return markov_test(observed, n_boot=self.N_BOOT, seed=seed)

        assert rejection_rate(run, replication_seeds(9104, 50)) >= 0.6
