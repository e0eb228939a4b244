"""
Tests for the shared core: exceptions, configuration schema and validation,
result DTOs, random streams, settings access, parallel map and monitoring.
"""

from __future__ import annotations

import math

import numpy as np
import pytest

from apps.core import conf, rng
from apps.core.dtos import FitResult, TestResult
from apps.core.exceptions import (
    ArbitrageViolationError,
    ArtifactIOError,
    IngestError,
    NumericalError,
    ValidationError as AppValidationError,
)
from apps.core.parallel import chunked, parallel_map
from apps.core.schemas import RunConfig
from apps.core.validation import validate_config


class TestExceptions:
    """
    Tests for the difflab exception hierarchy.
    """

    @pytest.mark.parametrize(
        "error, code, exit_code",
        [
            (AppValidationError("bad"), "VALIDATION_ERROR", 2),
            (ArbitrageViolationError("bad"), "ARBITRAGE_VIOLATION", 2),
            (IngestError("GAP_DETECTED", "gap"), "GAP_DETECTED", 2),
            (NumericalError("bad"), "NUMERICAL_FAILURE", 3),
            (ArtifactIOError("bad"), "IO_ERROR", 4),
        ],
    )
    def test_codes_and_exit_status(self, error, code, exit_code):
        """
        GOAL: Map each error kind to its code and CLI exit status.

        GUARANTEES:
          - error_code and exit_code match the documented table
          - to_dict carries code, message and details
        """
        assert error.error_code == code
        assert error.exit_code == exit_code
        assert set(error.to_dict()) == {"error_code", "message", "details"}

    def test_unknown_ingest_code(self):
        with pytest.raises(ValueError):
            IngestError("SOMETHING_ELSE", "nope")

    def test_details_default_to_empty_dict(self):
        assert NumericalError("diverged").details == {}

    def test_capture_without_sentry_returns_none(self):
        """
        GOAL: Report an error while Sentry is not configured.

        GUARANTEES:
          - No event id and no exception
        """
        error = NumericalError("optimizer diverged", details={"iterations": 50})
        assert error.capture_to_sentry(tags={"command": "calibrate"}) is None


class TestRunConfig:
    """
    Tests for RunConfig and validate_config.
    """

    def test_defaults(self):
        config = RunConfig(command="simulate")
        assert config.family == "cir"
        assert config.x0 == "stationary"
        assert config.output_format == "csv"
        assert config.resampler == "block"
        assert config.seed is None

    def test_none_values_fall_back_to_defaults(self):
        config = validate_config(RunConfig, {"command": "simulate", "n_steps": None, "seed": 3})
        assert config.n_steps == 1000
        assert config.seed == 3

    @pytest.mark.parametrize(
        "data",
        [
            {"command": "estimate", "method": "stanton"},
            {"command": "estimate", "input": "s.csv", "method": "nonsense"},
            {"command": "calibrate", "input": "s.csv", "method": "stanton"},
            {"command": "test", "input": "s.csv"},
            {"command": "price"},
            {"command": "simulate", "delta": 0},
            {"command": "simulate", "unknown_flag": 1},
            {"command": "simulate", "truncation": [0.2, 0.1]},
            {"command": "calibrate", "input": "s.csv", "method": "gmm", "a_values": [1.0, -2.0]},
        ],
    )
    def test_rejected_configs(self, data):
        """
        GOAL: Reject configurations a pipeline cannot run.

        GUARANTEES:
          - AppValidationError with per-field messages in details
        """
        with pytest.raises(AppValidationError) as exc_info:
            validate_config(RunConfig, data)
        assert exc_info.value.exit_code == 2
        assert exc_info.value.details["validation_errors"]

    def test_portfolio_price_config(self):
        config = validate_config(
            RunConfig,
            {
                "command": "price",
                "family": "gbm",
                "portfolio": [{"kind": "call", "strike": 1200}, {"kind": "cash", "amount": 40}],
            },
        )
        assert [leg.kind for leg in config.portfolio] == ["call", "cash"]


class TestDtos:
    """
    Tests for FitResult and TestResult.
    """

    def test_fit_result_lengths_must_match(self):
        with pytest.raises(Exception):
            FitResult(
                family="cir", method="pseudo_mle", parameter_names=["kappa"], estimates=[1.0, 2.0], stderr=[0.1], n_obs=10
            )

    def test_nan_stderr_is_allowed(self):
        fit = FitResult(
            family="vasicek",
            method="minimum_distance",
            parameter_names=["kappa", "alpha", "sigma"],
            estimates=[0.5, 0.06, 0.02],
            stderr=[math.nan] * 3,
            n_obs=100,
        )
        assert fit.as_dict()["alpha"] == 0.06

    def test_unconverged_fit_needs_diagnostics(self):
        with pytest.raises(Exception):
            FitResult(
                family="cir", method="gmm", parameter_names=["kappa"], estimates=[1.0], stderr=[0.1], n_obs=10,
                converged=False,
            )

    def test_p_value_range(self):
        with pytest.raises(Exception):
            TestResult(test="markov", statistic=1.0, p_value=1.5)


class TestRandomStreams:
    """
    Tests for counter-based random streams.
    """

    def test_same_key_same_draws(self):
        a = rng.stream(42, rng.SHOCKS, 3).standard_normal(5)
        b = rng.stream(42, rng.SHOCKS, 3).standard_normal(5)
        np.testing.assert_array_equal(a, b)

    def test_keys_are_independent(self):
        """
        GOAL: Separate streams for different ids and indices.

        GUARANTEES:
          - Changing the stream id or the index changes the draws
        """
        base = rng.stream(42, rng.SHOCKS, 0).standard_normal(5)
        assert not np.array_equal(base, rng.stream(42, rng.MONTE_CARLO, 0).standard_normal(5))
        assert not np.array_equal(base, rng.stream(42, rng.SHOCKS, 1).standard_normal(5))

    def test_spawned_seeds(self):
        seeds = rng.spawn_seeds(7, 10)
        assert seeds == rng.spawn_seeds(7, 10)
        assert len(set(seeds)) == 10
        assert all(0 <= s < 2**63 for s in seeds)

    def test_fresh_seed_fits_config(self):
        seed = rng.fresh_seed()
        assert RunConfig(command="simulate", seed=seed).seed == seed


class TestSettingsAccess:
    """
    Tests for apps.core.conf.
    """

    def test_reads_settings(self, settings):
        settings.DIFFLAB_MASS_FLOOR = 8
        settings.DIFFLAB_GRID_POINTS = 64
        assert conf.mass_floor() == 8.0
        assert conf.grid_points() == 64

    def test_missing_setting_uses_default(self, settings):
        del settings.DIFFLAB_N_BOOT
        assert conf.default_n_boot() == 500

    def test_thread_cap_from_settings(self, settings):
        settings.DIFFLAB_THREADS = 3
        assert conf.thread_cap() == 3
        settings.DIFFLAB_THREADS = 0
        assert conf.thread_cap() == 1


class TestParallelMap:
    """
    Tests for parallel_map and chunked.
    """

    def test_order_preserved_across_worker_counts(self):
        """
        GOAL: Return the same list whatever the number of threads.

        GUARANTEES:
          - Results follow input order for 1 and 4 workers
        """
        items = list(range(50))
        serial = parallel_map(lambda i: i * i, items, max_workers=1)
        threaded = parallel_map(lambda i: i * i, items, max_workers=4)
        assert serial == threaded == [i * i for i in items]

    def test_errors_propagate(self):
        def fail(i):
            if i == 3:
                raise NumericalError("replicate failed")
            return i

        with pytest.raises(NumericalError):
            parallel_map(fail, range(6), max_workers=2)

    def test_chunked_covers_range(self):
        slices = chunked(10, 4)
        assert [(s.start, s.stop) for s in slices] == [(0, 4), (4, 8), (8, 10)]


class TestSentryMonitoring:
    """
    Tests for Sentry monitoring integration.
    """

    def test_init_sentry_with_valid_dsn(self, monkeypatch):
        """
        GOAL: Verify Sentry initializes with valid DSN.

        GUARANTEES:
          - Returns True when the SDK accepts the DSN
        """
        from apps.core import monitoring

        monkeypatch.setattr(monitoring.sentry_sdk, "init", lambda *args, **kwargs: None)
        monkeypatch.setattr(monitoring, "_sentry_enabled", False)
        assert monitoring.init_sentry(dsn="https://test@sentry.io/123", environment="test") is True

    def test_init_sentry_with_empty_dsn(self):
        from apps.core.monitoring import init_sentry, is_sentry_enabled

        assert init_sentry(dsn="") is False
        assert is_sentry_enabled() is False

    def test_helpers_are_silent_when_disabled(self):
        """
        GOAL: Monitoring helpers do nothing without a DSN.

        GUARANTEES:
          - capture_* return None, add_breadcrumb does not raise
        """
        from apps.core.monitoring import add_breadcrumb, capture_exception, capture_message

        assert capture_exception(ValueError("x")) is None
        assert capture_message("bootstrap replicates failed", level="warning") is None
        add_breadcrumb(message="run started", category="run", level="info")

    def test_run_scope_is_transparent_when_disabled(self):
        from apps.core.monitoring import run_scope

        with run_scope("simulate", 7, {"family": "cir"}):
            value = 1 + 1
        assert value == 2


class TestSettingsEnvironment:
    """
    Tests for DIFFLAB_ENV resolution in config.settings.
    """

    @pytest.mark.parametrize(
        "environ, expected",
        [({}, "development"), ({"DIFFLAB_ENV": " Production "}, "production"), ({"DIFFLAB_ENV": ""}, "development")],
    )
    def test_known_layers(self, environ, expected):
        from config.settings import settings_environment

        assert settings_environment(environ) == expected

    def test_unknown_layer_is_improperly_configured(self):
        from django.core.exceptions import ImproperlyConfigured

        from config.settings import settings_environment

        with pytest.raises(ImproperlyConfigured):
            settings_environment({"DIFFLAB_ENV": "staging"})
