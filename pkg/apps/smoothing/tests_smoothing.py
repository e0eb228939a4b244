"""
Unit tests for apps/smoothing/.

Kernel normalization, density and regression smoothers, local-linear weight
identities and bandwidth selection.
"""

from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import integrate, stats

from apps.core.exceptions import NumericalError, ValidationError
from apps.smoothing.bandwidth import CVMode, select_bandwidth_cv, silverman_bandwidth
from apps.smoothing.curves import CurveEstimate, PointStatus
from apps.smoothing.kernels import KernelShape, KernelSpec
from apps.smoothing.services import (
    default_grid,
    kernel_density,
    local_linear,
    local_linear_slope,
    local_linear_weights,
    nadaraya_watson,
)

EPANECHNIKOV = KernelShape.EPANECHNIKOV


class TestKernels:
    """
    Tests for kernel functions and KernelSpec.
    """

    @pytest.mark.parametrize("shape", list(KernelShape))
    def test_kernels_integrate_to_one(self, shape):
        """
        GOAL: Verify every kernel shape is a probability density.

        GUARANTEES:
          - int K_h = 1 within 1e-4 for h = 0.3
        """
        kernel = KernelSpec(shape, 0.3)
        d = np.linspace(-3.0, 3.0, 200_001)
        assert integrate.trapezoid(kernel.weights(d), d) == pytest.approx(1.0, abs=1e-4)

    def test_one_sided_kernel_support(self):
        """
        GOAL: Verify the one-sided kernel only weights offsets in (-h, 0).

        GUARANTEES:
          - Zero at 0, at -h and for positive offsets
        """
        kernel = KernelSpec(KernelShape.ONE_SIDED_EPANECHNIKOV, 2.0)
        weights = kernel.weights(np.array([-2.0, -1.0, 0.0, 0.5]))
        assert weights[0] == 0.0
        assert weights[1] > 0.0
        assert weights[2] == 0.0
        assert weights[3] == 0.0

    @pytest.mark.parametrize("h", [0.0, -1.0, float("nan")])
    def test_invalid_bandwidth(self, h):
        """
        GOAL: Verify non-positive bandwidths are rejected.

        GUARANTEES:
          - ValidationError
        """
        with pytest.raises(ValidationError):
            KernelSpec(EPANECHNIKOV, h)


class TestCurveEstimate:
    """
    Tests for the CurveEstimate container.
    """

    def test_unequal_lengths_rejected(self):
        """
        GOAL: Verify array lengths are checked.

        GUARANTEES:
          - ValidationError
        """
        with pytest.raises(ValidationError):
            CurveEstimate([0.0, 1.0], [1.0], [0.1, 0.1], [10.0, 10.0])

    def test_clipping_flags_points(self):
        """
        GOAL: Verify negative values are clipped to zero and flagged.

        GUARANTEES:
          - Clipped points have value 0 and status clipped, and stay reliable
          - diagnostics carry the clipped count
        """
        curve = CurveEstimate([0.0, 1.0, 2.0], [0.5, -0.1, 0.2], [0.1, 0.1, 0.1], [50.0, 50.0, 50.0])
        clipped = curve.clipped_at_zero()
        assert clipped.value.tolist() == [0.5, 0.0, 0.2]
        assert clipped.status[1] == PointStatus.CLIPPED.value
        assert clipped.reliable.all()
        assert clipped.diagnostics["clipped_points"] == 1

    def test_low_mass_is_unreliable(self):
        """
        GOAL: Verify points below the mass floor are flagged.

        GUARANTEES:
          - Status low_mass and reliable False below the floor of 5
        """
        curve = CurveEstimate([0.0, 1.0], [1.0, 1.0], [0.1, 0.1], [2.0, 40.0])
        assert curve.status.tolist() == ["low_mass", "ok"]
        assert curve.reliable.tolist() == [False, True]

    def test_frame_columns(self):
        """
        GOAL: Verify the tabular form.

        GUARANTEES:
          - Columns grid, value, stderr, mass, status
        """
        frame = CurveEstimate([0.0, 1.0], [1.0, 2.0], [0.1, 0.1], [9.0, 9.0]).to_frame()
        assert list(frame.columns) == ["grid", "value", "stderr", "mass", "status"]


class TestKernelDensity:
    """
    Tests for kernel_density.
    """

    def test_single_atom_mode(self):
        """
        GOAL: Verify replicated data peak at the atom.

        GUARANTEES:
          - argmax of the estimate is the atom
        """
        grid = np.linspace(-1.0, 1.0, 201)
        curve = kernel_density(np.full(50, 0.25), KernelSpec(EPANECHNIKOV, 0.2), grid)
        assert grid[np.argmax(curve.value)] == pytest.approx(0.25)

    def test_integrates_to_one(self, rng):
        """
        GOAL: Verify kernel normalization carries over to the estimate.

        GUARANTEES:
          - Trapezoid integral over an enclosing grid within 0.01 of one
        """
        data = rng.standard_normal(2000)
        grid = np.linspace(-6.0, 6.0, 2001)
        curve = kernel_density(data, KernelSpec(EPANECHNIKOV, 0.3), grid)
        assert integrate.trapezoid(curve.value, grid) == pytest.approx(1.0, abs=0.01)

    def test_vasicek_invariant_density(self, vasicek_model, make_exact_path):
        """
        GOAL: Verify the estimate recovers the Gaussian invariant law of Vasicek data.

        GUARANTEES:
          - L1 distance to Normal(0.06, 0.02^2) below 0.05 on 1e5 points
        """
        path = make_exact_path(vasicek_model, 1.0, 100_000, seed=77)
        sd = 0.02 / math.sqrt(2 * 0.5)
        grid = np.linspace(0.06 - 6 * sd, 0.06 + 6 * sd, 801)
        h = silverman_bandwidth(path.values, EPANECHNIKOV)
        curve = kernel_density(path.values, KernelSpec(EPANECHNIKOV, h), grid)
        truth = stats.norm.pdf(grid, 0.06, sd)
        assert integrate.trapezoid(np.abs(curve.value - truth), grid) < 0.05

    def test_gaussian_kernel_positive(self, rng):
        """
        GOAL: Verify gaussian-kernel estimates are strictly positive on the grid.

        GUARANTEES:
          - min value > 0 and finite stderr everywhere above the mass floor
        """
        data = rng.uniform(0.0, 1.0, 500)
        curve = kernel_density(data, KernelSpec(KernelShape.GAUSSIAN, 0.05), np.linspace(-0.2, 1.2, 50))
        assert curve.value.min() > 0
        assert np.all(np.isfinite(curve.stderr[curve.mass >= 5]))

    def test_rejects_short_data(self):
        """
        GOAL: Verify at least two observations are required.

        GUARANTEES:
          - ValidationError for empty and single-point data
        """
        for data in ([], [1.0]):
            with pytest.raises(ValidationError):
                kernel_density(data, KernelSpec(EPANECHNIKOV, 0.1), [0.0, 1.0])


class TestNadarayaWatson:
    """
    Tests for nadaraya_watson.
    """

    def test_constant_response(self, rng):
        """
        GOAL: Verify a constant response is reproduced wherever there is mass.

        GUARANTEES:
          - value == c to 1e-12 at all non-empty points
        """
        x = rng.uniform(0.0, 1.0, 300)
        curve = nadaraya_watson(x, np.full(300, 3.5), KernelSpec(EPANECHNIKOV, 0.1), np.linspace(0, 1, 21))
        assert np.allclose(curve.value, 3.5, atol=1e-12)

    def test_matches_direct_ratio(self, rng):
        """
        GOAL: Verify the estimate equals a direct weighted average.

        GUARANTEES:
          - Agreement to 1e-12 at a chosen point
        """
        x = rng.uniform(-1.0, 1.0, 400)
        y = x.copy()
        kernel = KernelSpec(KernelShape.GAUSSIAN, 0.2)
        point = 0.3
        w = np.exp(-0.5 * ((x - point) / 0.2) ** 2)
        expected = np.sum(w * y) / np.sum(w)
        curve = nadaraya_watson(x, y, kernel, [point])
        assert curve.value[0] == pytest.approx(expected, abs=1e-12)

    def test_linear_signal_interior_error(self, rng):
        """
        GOAL: Verify accuracy on a noisy linear signal.

        GUARANTEES:
          - max abs error < 0.02 on the interior grid for n = 1e4, h = 0.05
        """
        x = rng.uniform(0.0, 1.0, 10_000)
        y = 2 * x + rng.normal(0.0, 0.01, x.size)
        grid = np.linspace(0.1, 0.9, 41)
        curve = nadaraya_watson(x, y, KernelSpec(EPANECHNIKOV, 0.05), grid)
        assert np.max(np.abs(curve.value - 2 * grid)) < 0.02

    def test_zero_mass_point_flagged(self):
        """
        GOAL: Verify points without data are flagged, not raised.

        GUARANTEES:
          - value NaN and status empty far from the data
        """
        x = np.linspace(0.0, 1.0, 50)
        curve = nadaraya_watson(x, x, KernelSpec(EPANECHNIKOV, 0.1), [0.5, 5.0])
        assert curve.status[1] == PointStatus.EMPTY.value
        assert math.isnan(curve.value[1])
        assert not curve.reliable[1]


class TestLocalLinear:
    """
    Tests for local-linear regression and its equivalent kernel.
    """

    def test_affine_reproduction(self, rng):
        """
        GOAL: Verify affine responses are reproduced exactly.

        GUARANTEES:
          - |m(x) - (a + b x)| < 1e-10 on the interior grid
        """
        x = rng.uniform(0.0, 1.0, 800)
        grid = np.linspace(0.05, 0.95, 37)
        curve = local_linear(x, 1.5 - 4.0 * x, KernelSpec(EPANECHNIKOV, 0.08), grid)
        np.testing.assert_allclose(curve.value, 1.5 - 4.0 * grid, atol=1e-10)

    def test_weight_identities(self, rng):
        """
        GOAL: Verify the equivalent kernel's moment identities on a random design.

        GUARANTEES:
          - |sum K_n - 1| < 1e-10 and |sum K_n (x_i - x)| < 1e-10 * scale per row
        """
        x = rng.normal(0.0, 2.0, 600)
        grid = np.linspace(-2.0, 2.0, 25)
        weights, mass, status = local_linear_weights(x, KernelSpec(KernelShape.GAUSSIAN, 0.4), grid)
        assert np.all(status == PointStatus.OK.value)
        np.testing.assert_allclose(weights.sum(axis=1), 1.0, atol=1e-10)
        first = np.sum(weights * (x[None, :] - grid[:, None]), axis=1)
        assert np.max(np.abs(first)) < 1e-10 * np.ptp(x)
        assert np.all(mass > 5)

    def test_boundary_bias_is_second_order(self):
        """
        GOAL: Verify the left-edge bias of local linear shrinks like h^2.

        GUARANTEES:
          - Halving h reduces the edge error for y = x^2 by a factor within [3, 5]
        """
        x = np.linspace(0.0, 1.0, 4001)
        y = x * x
        errors = []
        for h in (0.1, 0.05):
            curve = local_linear(x, y, KernelSpec(EPANECHNIKOV, h), [0.0])
            errors.append(abs(curve.value[0]))
        assert 3.0 <= errors[0] / errors[1] <= 5.0

    def test_singular_window_flagged(self):
        """
        GOAL: Verify a window holding a single design point is flagged degenerate.

        GUARANTEES:
          - status degenerate; value falls back to the local average
        """
        x = np.arange(10, dtype=float)
        y = x * x
        curve = local_linear(x, y, KernelSpec(EPANECHNIKOV, 0.5), [3.0, 4.5])
        assert curve.status[0] == PointStatus.DEGENERATE.value
        assert curve.value[0] == pytest.approx(9.0)
        assert curve.diagnostics["degenerate_points"] == 1

    def test_affine_and_shift_equivariance(self, rng):
        """
        GOAL: Verify equivariance under affine maps of y and shifts of x.

        GUARANTEES:
          - m(a + b y) = a + b m(y); shifting x and the grid leaves m unchanged
        """
        x = rng.uniform(0.0, 1.0, 500)
        y = np.sin(6 * x) + rng.normal(0.0, 0.1, x.size)
        kernel = KernelSpec(EPANECHNIKOV, 0.1)
        grid = np.linspace(0.1, 0.9, 17)
        base = local_linear(x, y, kernel, grid).value
        np.testing.assert_allclose(local_linear(x, 2.0 - 3.0 * y, kernel, grid).value, 2.0 - 3.0 * base, atol=1e-10)
        np.testing.assert_allclose(local_linear(x + 10.0, y, kernel, grid + 10.0).value, base, atol=1e-10)

    def test_slope_of_affine_data(self, rng):
        """
        GOAL: Verify the local slope of affine data.

        GUARANTEES:
          - slope == b to 1e-8
        """
        x = rng.uniform(-1.0, 1.0, 400)
        curve = local_linear_slope(x, 0.5 + 3.0 * x, KernelSpec(EPANECHNIKOV, 0.2), np.linspace(-0.8, 0.8, 9))
        np.testing.assert_allclose(curve.value, 3.0, atol=1e-8)

    def test_weights_reproduce_fit(self, rng):
        """
        GOAL: Verify the weight matrix and local_linear agree.

        GUARANTEES:
          - K_n @ y equals the fitted values
        """
        x = rng.uniform(0.0, 1.0, 300)
        y = np.cos(3 * x)
        kernel = KernelSpec(EPANECHNIKOV, 0.15)
        grid = np.linspace(0.2, 0.8, 7)
        weights, _, _ = local_linear_weights(x, kernel, grid)
        np.testing.assert_allclose(weights @ y, local_linear(x, y, kernel, grid).value, atol=1e-12)

    def test_default_grid_quantiles(self, rng):
        """
        GOAL: Verify the default grid spans the 1st to 99th percentiles.

        GUARANTEES:
          - 100 points by default with the quantile endpoints
        """
        x = rng.normal(size=5000)
        grid = default_grid(x)
        assert grid.size == 100
        assert grid[0] == pytest.approx(np.quantile(x, 0.01))
        assert grid[-1] == pytest.approx(np.quantile(x, 0.99))


class TestBandwidthSelection:
    """
    Tests for the reference rule and cross-validation.
    """

    def test_silverman_rule(self, rng):
        """
        GOAL: Verify the reference rule formula.

        GUARANTEES:
          - Gaussian value 0.9 min(sd, IQR/1.34) n^-1/5; Epanechnikov 2.214 times larger
        """
        x = rng.normal(size=1000)
        q75, q25 = np.percentile(x, [75, 25])
        expected = 0.9 * min(np.std(x, ddof=1), (q75 - q25) / 1.34) * 1000 ** (-0.2)
        assert silverman_bandwidth(x) == pytest.approx(expected)
        assert silverman_bandwidth(x, EPANECHNIKOV) == pytest.approx(2.214 * expected)

    def test_affine_tie_goes_to_largest(self, rng):
        """
        GOAL: Verify a flat criterion picks the largest candidate.

        GUARANTEES:
          - Noise-free affine data return max(candidates)
        """
        x = rng.uniform(0.0, 1.0, 300)
        candidates = [0.1, 0.2, 0.4]
        assert select_bandwidth_cv(x, 1.0 + 2.0 * x, EPANECHNIKOV, candidates) == 0.4

    def test_regression_choice_is_interior(self, rng):
        """
        GOAL: Verify leave-one-out CV picks an interior bandwidth for a curved signal.

        GUARANTEES:
          - Selected h strictly inside [0.01, 0.5]
        """
        x = rng.uniform(0.0, 1.0, 2000)
        y = np.sin(10 * x) + rng.normal(0.0, 0.3, x.size)
        candidates = np.geomspace(0.01, 0.5, 12).tolist()
        h = select_bandwidth_cv(x, y, EPANECHNIKOV, candidates, CVMode.REGRESSION)
        assert candidates[0] < h < candidates[-1]

    def test_density_choice_near_reference(self, rng):
        """
        GOAL: Verify least-squares CV agrees with the reference rule on Normal data.

        GUARANTEES:
          - Selected h within a factor 2 of the Silverman value
        """
        x = rng.normal(size=10_000)
        reference = silverman_bandwidth(x)
        candidates = np.geomspace(0.03, 0.6, 20).tolist()
        h = select_bandwidth_cv(x, None, KernelShape.GAUSSIAN, candidates, CVMode.DENSITY)
        assert reference / 2 <= h <= reference * 2

    def test_conditional_density_returns_candidate(self, rng):
        """
        GOAL: Verify conditional-density CV returns a member of the candidate set.

        GUARANTEES:
          - Result is one of the candidates and not the smallest for smooth AR(1) data
        """
        x = rng.normal(size=600)
        y = 0.6 * x + 0.8 * rng.normal(size=600)
        candidates = [0.02, 0.1, 0.3, 0.6]
        h = select_bandwidth_cv(x, y, EPANECHNIKOV, candidates, CVMode.CONDITIONAL_DENSITY, h_x=0.5)
        assert h in candidates
        assert h > 0.02

    def test_too_few_observations(self):
        """
        GOAL: Verify the minimum sample size.

        GUARANTEES:
          - ValidationError below 20 observations
        """
        x = np.linspace(0, 1, 10)
        with pytest.raises(ValidationError):
            select_bandwidth_cv(x, x, EPANECHNIKOV, [0.1])

    def test_all_degenerate_candidates(self):
        """
        GOAL: Verify NumericalError when no candidate yields a usable fit.

        GUARANTEES:
          - details list every candidate
        """
        x = np.arange(30, dtype=float)
        with pytest.raises(NumericalError) as excinfo:
            select_bandwidth_cv(x, x * x, EPANECHNIKOV, [0.1, 0.2])
        assert set(excinfo.value.details["candidates"]) == {"0.1", "0.2"}
