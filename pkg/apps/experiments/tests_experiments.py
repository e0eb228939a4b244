"""
Tests for apps/experiments/.

CSV ingestion, run directories and atomic artifacts, the run() manifest
contract, and the `difflab` management command end to end.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from django.core.management import call_command
from django.core.management.base import CommandError

from apps.core.exceptions import ArtifactIOError, IngestError, NumericalError, ValidationError
from apps.core.schemas import RunConfig
from apps.experiments import services
from apps.experiments.artifacts import RunDirectory, jsonable, path_frame
from apps.experiments.ingest import ingest_options, ingest_series
from apps.experiments.services import run


def write(tmp_path: Path, name: str, text: str) -> Path:
    target = tmp_path / name
    target.write_text(text, encoding="utf-8")
    return target


def read_manifest(directory: Path) -> dict:
    return json.loads((directory / "manifest.json").read_text(encoding="utf-8"))


@pytest.fixture
def cir_csv(tmp_path, cir_path) -> Path:
    target = tmp_path / "cir.csv"
    path_frame(cir_path).to_csv(target, index=False)
    return target


class TestIngestSeries:
    """
    Tests for ingest_series.
    """

    def test_two_rows_in_years(self, tmp_path):
        """
        GOAL: Parse the smallest valid t,x file.

        GUARANTEES:
          - delta is the row spacing and n counts transitions
        """
        path = ingest_series(write(tmp_path, "s.csv", "t,x\n0,1.0\n0.5,1.1\n"))
        assert path.delta == pytest.approx(0.5)
        assert path.n == 1
        assert path.values.tolist() == [1.0, 1.1]

    def test_weekly_dates(self, tmp_path):
        """
        GOAL: Infer delta from ISO dates with the weekly calendar.

        GUARANTEES:
          - One week is 1/52 of a year
        """
        text = "date,x\n2024-01-01,0.05\n2024-01-08,0.051\n2024-01-15,0.052\n2024-01-22,0.05\n"
        path = ingest_series(write(tmp_path, "w.csv", text), calendar="weeks52")
        assert path.delta == pytest.approx(1.0 / 52.0)
        assert path.n == 3

    def test_trading_days_skip_weekends(self, tmp_path):
        """
        GOAL: Treat Friday to Monday as one trading day.

        GUARANTEES:
          - No gap is reported across a weekend with days252
        """
        days = ["2024-01-03", "2024-01-04", "2024-01-05", "2024-01-08", "2024-01-09"]
        text = "date,x\n" + "".join(f"{d},{1 + i / 100}\n" for i, d in enumerate(days))
        path = ingest_series(write(tmp_path, "d.csv", text), calendar="days252")
        assert path.delta == pytest.approx(1.0 / 252.0)
        assert path.excluded_transitions == ()

    def test_date_file_needs_calendar(self, tmp_path):
        """
        GOAL: Refuse date files read in plain years.

        GUARANTEES:
          - ValidationError names the calendar
        """
        with pytest.raises(ValidationError) as exc_info:
            ingest_series(write(tmp_path, "d.csv", "date,x\n2024-01-01,1\n2024-01-08,1\n"))
        assert exc_info.value.details["calendar"] == "years"

    def test_duplicate_timestamp(self, tmp_path):
        """
        GOAL: Reject a repeated time stamp.

        GUARANTEES:
          - NON_UNIFORM_SPACING points at the duplicated row
        """
        text = "t,x\n0,1\n0.5,1\n0.5,1.2\n1.0,1\n"
        with pytest.raises(IngestError) as exc_info:
            ingest_series(write(tmp_path, "dup.csv", text))
        assert exc_info.value.error_code == "NON_UNIFORM_SPACING"
        assert exc_info.value.details["line"] == 4

    def test_irregular_spacing(self, tmp_path):
        with pytest.raises(IngestError) as exc_info:
            ingest_series(write(tmp_path, "irr.csv", "t,x\n0,1\n1,1\n2.5,1\n"))
        assert exc_info.value.error_code == "NON_UNIFORM_SPACING"
        assert exc_info.value.exit_code == 2

    def test_non_numeric_value(self, tmp_path):
        """
        GOAL: Name the line of a value that is not a number.

        GUARANTEES:
          - NON_NUMERIC_VALUE with line and column
        """
        with pytest.raises(IngestError) as exc_info:
            ingest_series(write(tmp_path, "bad.csv", "t,x\n0,1\n0.5,abc\n"))
        error = exc_info.value
        assert error.error_code == "NON_NUMERIC_VALUE"
        assert error.details["line"] == 3
        assert error.details["column"] == "x"

    def test_too_few_rows(self, tmp_path):
        with pytest.raises(IngestError) as exc_info:
            ingest_series(write(tmp_path, "one.csv", "t,x\n0,1\n"))
        assert exc_info.value.error_code == "TOO_FEW_ROWS"

    def test_schema_mismatch(self, tmp_path):
        with pytest.raises(IngestError) as exc_info:
            ingest_series(write(tmp_path, "hdr.csv", "time,value\n0,1\n1,2\n"))
        assert exc_info.value.error_code == "SCHEMA_MISMATCH"
        assert exc_info.value.details["found"] == ["time", "value"]

    @pytest.mark.parametrize("text", ["", "t,x\n"])
    def test_empty_file(self, tmp_path, text):
        """
        GOAL: Reject files with no data rows.

        GUARANTEES:
          - Both a zero-byte file and a header-only file give EMPTY_FILE
        """
        with pytest.raises(IngestError) as exc_info:
            ingest_series(write(tmp_path, "empty.csv", text))
        assert exc_info.value.error_code == "EMPTY_FILE"

    def test_extra_field(self, tmp_path):
        with pytest.raises(IngestError) as exc_info:
            ingest_series(write(tmp_path, "wide.csv", "t,x\n0,1\n0.5,1,7\n"))
        assert exc_info.value.error_code == "MALFORMED_ROW"
        assert exc_info.value.details["line"] == 3

    def test_blank_cell(self, tmp_path):
        with pytest.raises(IngestError) as exc_info:
            ingest_series(write(tmp_path, "blank.csv", "t,x\n0,1\n0.5,\n1.0,2\n"))
        assert exc_info.value.error_code == "MALFORMED_ROW"
        assert exc_info.value.details["line"] == 3

    def test_gaps_rejected_by_default(self, tmp_path):
        with pytest.raises(IngestError) as exc_info:
            ingest_series(write(tmp_path, "gap.csv", "t,x\n0,1\n1,1.1\n3,1.2\n4,1.3\n"))
        assert exc_info.value.error_code == "GAP_DETECTED"
        assert exc_info.value.details["line"] == 4

    def test_gaps_excluded_on_request(self, tmp_path):
        """
        GOAL: Keep a gappy series and drop only the transition across the gap.

        GUARANTEES:
          - excluded_transitions holds the spanning transition
          - The transition mask drops exactly that transition
        """
        path = ingest_series(write(tmp_path, "gap.csv", "t,x\n0,1\n1,1.1\n3,1.2\n4,1.3\n"), allow_gaps=True)
        assert path.delta == pytest.approx(1.0)
        assert path.excluded_transitions == (1,)
        assert path.transition_mask().tolist() == [True, False, True]

    def test_missing_file(self, tmp_path):
        with pytest.raises(ArtifactIOError) as exc_info:
            ingest_series(tmp_path / "absent.csv")
        assert exc_info.value.exit_code == 4

    def test_input_is_not_modified(self, tmp_path):
        source = write(tmp_path, "s.csv", "t,x\n0,1.0\n0.5,1.1\n1.0,1.2\n")
        before = source.read_bytes()
        ingest_series(source)
        assert source.read_bytes() == before


class TestIngestOptions:
    """
    Tests for ingest_options.
    """

    HEADER = "S,K,T,r,delta,C\n"

    def test_valid_row(self, tmp_path):
        """
        GOAL: Parse one quote and derive its forward.

        GUARANTEES:
          - F = S exp((r - delta) T)
        """
        quotes = ingest_options(write(tmp_path, "o.csv", self.HEADER + "100,100,1,0.05,0.01,10\n"))
        assert len(quotes) == 1
        assert quotes.forward[0] == pytest.approx(100.0 * math.exp(0.04))
        assert quotes.flagged == []

    def test_arbitrage_violation_is_flagged_not_dropped(self, tmp_path):
        text = self.HEADER + "100,100,1,0.05,0,10\n100,110,1,0.05,0,-1\n"
        quotes = ingest_options(write(tmp_path, "o.csv", text))
        assert len(quotes) == 2
        assert quotes.flagged == [1]

    def test_header_mismatch_lists_expected_columns(self, tmp_path):
        with pytest.raises(IngestError) as exc_info:
            ingest_options(write(tmp_path, "o.csv", "S,K,T,C\n100,100,1,10\n"))
        assert exc_info.value.error_code == "SCHEMA_MISMATCH"
        assert exc_info.value.details["expected"] == [["S", "K", "T", "r", "delta", "C"]]

    def test_invalid_quote_names_line(self, tmp_path):
        text = self.HEADER + "100,100,1,0.05,0,10\n100,0,1,0.05,0,10\n"
        with pytest.raises(IngestError) as exc_info:
            ingest_options(write(tmp_path, "o.csv", text))
        assert exc_info.value.error_code == "MALFORMED_ROW"
        assert exc_info.value.details["line"] == 3


class TestArtifacts:
    """
    Tests for RunDirectory and the JSON conversion helper.
    """

    def test_jsonable(self):
        payload = {"a": np.float64(1.5), "b": np.arange(3), "c": float("nan"), "d": Path("x/y")}
        assert jsonable(payload) == {"a": 1.5, "b": [0, 1, 2], "c": None, "d": str(Path("x/y"))}

    def test_writes_are_tracked_and_leave_no_temporaries(self, tmp_path):
        """
        GOAL: Write tables and JSON into <root>/<command>-<seed>.

        GUARANTEES:
          - artifacts lists each file once in write order
          - No temporary sibling survives a write
        """
        out = RunDirectory(tmp_path, "simulate", 42)
        frame = pd.DataFrame({"t": [0.0, 1.0], "x": [1.0, 2.0]})
        out.table("path", frame)
        out.table("path", frame)
        out.json("summary", {"value": 1})
        assert out.path == tmp_path / "simulate-42"
        assert out.artifacts == ["path.csv", "summary.json"]
        assert sorted(p.name for p in out.path.iterdir()) == ["path.csv", "summary.json"]
        assert pd.read_csv(out.path / "path.csv").equals(frame)

    def test_json_tables(self, tmp_path):
        out = RunDirectory(tmp_path, "simulate", 1, table_format="json")
        name = out.table("path", pd.DataFrame({"t": [0.0, 0.5], "x": [1.0, 1.1]}))
        assert name == "path.json"
        assert json.loads((out.path / name).read_text()) == {"t": [0.0, 0.5], "x": [1.0, 1.1]}

    def test_discard_removes_artifacts(self, tmp_path):
        out = RunDirectory(tmp_path, "estimate", 3)
        out.json("partial", {"x": 1})
        out.write_manifest({"status": "failed"})
        out.discard()
        assert out.artifacts == []
        assert [p.name for p in out.path.iterdir()] == ["manifest.json"]


class TestRun:
    """
    Tests for the run() manifest contract.
    """

    def simulate_config(self, output_dir: Path, **overrides) -> RunConfig:
        fields = {"command": "simulate", "family": "vasicek", "n_steps": 200, "seed": 7, "output_dir": output_dir}
        fields.update(overrides)
        return RunConfig(**fields)

    def test_simulate_is_byte_identical_under_fixed_seed(self, output_dir):
        """
        GOAL: Reproduce a simulation exactly from its seed.

        GUARANTEES:
          - Two runs with the same seed give byte-identical path.csv
        """
        config = self.simulate_config(output_dir)
        run(config)
        first = (output_dir / "simulate-7" / "path.csv").read_bytes()
        run(config)
        second = (output_dir / "simulate-7" / "path.csv").read_bytes()
        assert first == second
        assert len(pd.read_csv(output_dir / "simulate-7" / "path.csv")) == 201

    def test_manifest_echoes_config_and_seed(self, output_dir):
        manifest = run(self.simulate_config(output_dir))
        stored = read_manifest(output_dir / "simulate-7")
        assert manifest.status == "succeeded"
        assert stored["seed"] == 7
        assert stored["config"]["seed"] == 7
        assert stored["config"]["family"] == "vasicek"
        assert stored["artifacts"] == ["path.csv"]
        assert "numpy" in stored["versions"]

    def test_seed_is_materialized(self, output_dir):
        manifest = run(self.simulate_config(output_dir, seed=None, n_steps=20))
        assert isinstance(manifest.seed, int)
        assert manifest.config["seed"] == manifest.seed
        assert (output_dir / f"simulate-{manifest.seed}" / "manifest.json").exists()

    def test_scheme_comparison(self, output_dir):
        run(self.simulate_config(output_dir, compare_schemes=True, family="cir", n_steps=50))
        assert (output_dir / "simulate-7" / "scheme_comparison.json").exists()

    def test_missing_input_fails_with_io_code(self, output_dir, tmp_path):
        """
        GOAL: Record an I/O failure without raising.

        GUARANTEES:
          - status failed, exit_code 4, no artifacts besides the manifest
        """
        config = RunConfig(
            command="estimate", method="stanton", input=tmp_path / "absent.csv", seed=1, output_dir=output_dir
        )
        manifest = run(config)
        assert manifest.status == "failed"
        assert manifest.error["error_code"] == "IO_ERROR"
        assert manifest.error["exit_code"] == 4
        assert manifest.artifacts == []
        assert read_manifest(output_dir / "estimate-1")["status"] == "failed"

    def test_partial_artifacts_are_removed(self, output_dir, monkeypatch):
        """
        GOAL: Remove what a pipeline wrote before it failed.

        GUARANTEES:
          - The error code reaches the manifest
          - Only manifest.json remains in the run directory
        """

        def broken(config, out):
            out.json("half_done", {"x": 1})
            raise NumericalError("optimizer diverged", details={"iterations": 100})

        monkeypatch.setitem(services.PIPELINES, "simulate", broken)
        manifest = run(self.simulate_config(output_dir))
        assert manifest.error["error_code"] == "NUMERICAL_FAILURE"
        assert manifest.error["exit_code"] == 3
        assert [p.name for p in (output_dir / "simulate-7").iterdir()] == ["manifest.json"]

    def test_unexpected_error_still_writes_manifest(self, output_dir, monkeypatch):
        def crash(config, out):
            raise RuntimeError("boom")

        monkeypatch.setitem(services.PIPELINES, "simulate", crash)
        with pytest.raises(RuntimeError):
            run(self.simulate_config(output_dir))
        stored = read_manifest(output_dir / "simulate-7")
        assert stored["status"] == "failed"
        assert stored["error"]["error_code"] == "INTERNAL_ERROR"

    def test_price_reports_black_scholes_for_gbm(self, output_dir):
        config = RunConfig(
            command="price",
            family="gbm",
            params={"mu": 0.05, "sigma": 0.2},
            spot=100.0,
            strike=100.0,
            rate=0.05,
            maturity=1.0,
            n_paths=20_000,
            steps=1,
            seed=11,
            output_dir=output_dir,
        )
        run(config)
        price = json.loads((output_dir / "price-11" / "price.json").read_text())
        assert price["black_scholes"] == pytest.approx(10.4506, abs=1e-3)
        assert abs(price["mc_price"] - price["black_scholes"]) < 4 * price["mc_stderr"]

    def test_price_with_dividend_yield_agrees(self, output_dir):
        """
        GOAL: Keep the Monte Carlo and Black-Scholes numbers of one run consistent when q > 0.
        """
        config = RunConfig(
            command="price",
            family="gbm",
            params={"mu": 0.05, "sigma": 0.2},
            spot=100.0,
            strike=100.0,
            rate=0.05,
            dividend_yield=0.05,
            maturity=1.0,
            n_paths=20_000,
            seed=12,
            output_dir=output_dir,
        )
        run(config)
        price = json.loads((output_dir / "price-12" / "price.json").read_text())
        assert price["black_scholes"] < 8.0
        assert abs(price["mc_price"] - price["black_scholes"]) < 4 * price["mc_stderr"]

    @pytest.mark.slow
    def test_glr_transition_on_cir_data(self, output_dir, tmp_path, make_exact_path, cir_model):
        """
        GOAL: Run the transition-density GLR test from a CSV of CIR data.

        GUARANTEES:
          - p_value lies in [0, 1]
          - The truncation region is echoed in the result
        """
        source = tmp_path / "cir.csv"
        path_frame(make_exact_path(cir_model, 1.0 / 12.0, 600, seed=5)).to_csv(source, index=False)
        config = RunConfig(
            command="test", input=source, test_kind="glr-transition", family="cir", n_boot=19, seed=3,
            output_dir=output_dir,
        )
        manifest = run(config)
        assert manifest.status == "succeeded"
        result = json.loads((output_dir / "test-3" / "test_result.json").read_text())
        assert 0.0 <= result["p_value"] <= 1.0
        low, high = result["diagnostics"]["truncation"]
        assert low < high


class TestDifflabCommand:
    """
    Tests for `manage.py difflab`.
    """

    def test_simulate(self, output_dir):
        call_command(
            "difflab", "simulate", "--family", "vasicek", "--n-steps", "100", "--seed", "3",
            "--output-dir", str(output_dir),
        )
        frame = pd.read_csv(output_dir / "simulate-3" / "path.csv")
        assert list(frame.columns) == ["t", "x"]
        assert len(frame) == 101

    def test_flags_override_config_file(self, output_dir, tmp_path):
        """
        GOAL: Merge a JSON config with command-line flags.

        GUARANTEES:
          - Flags win over the file
          - File values not overridden survive
        """
        config = write(tmp_path, "run.json", json.dumps({"family": "cir", "n_steps": 40, "seed": 1}))
        call_command("difflab", "simulate", "--config", str(config), "--seed", "2", "--output-dir", str(output_dir))
        assert not (output_dir / "simulate-1").exists()
        stored = read_manifest(output_dir / "simulate-2")
        assert stored["config"]["family"] == "cir"
        assert stored["config"]["n_steps"] == 40

    def test_json_output_format(self, output_dir):
        call_command(
            "difflab", "simulate", "--n-steps", "10", "--seed", "4", "--format", "json",
            "--output-dir", str(output_dir),
        )
        data = json.loads((output_dir / "simulate-4" / "path.json").read_text())
        assert len(data["x"]) == 11

    def test_price(self, output_dir):
        call_command(
            "difflab", "price", "--family", "gbm", "--param", "mu=0.05", "--param", "sigma=0.2",
            "--spot", "100", "--strike", "100", "--rate", "0.05", "--maturity", "1",
            "--n-paths", "5000", "--steps", "1", "--seed", "9", "--output-dir", str(output_dir),
        )
        price = json.loads((output_dir / "price-9" / "price.json").read_text())
        assert price["n_paths"] == 5000
        assert price["mc_stderr"] > 0

    def test_estimate_writes_curves_and_plot_data(self, output_dir, cir_csv):
        call_command(
            "difflab", "estimate", "--method", "stanton", "--input", str(cir_csv), "--seed", "5",
            "--output-dir", str(output_dir),
        )
        run_dir = output_dir / "estimate-5"
        for stem in ("drift", "vol2"):
            assert list(pd.read_csv(run_dir / f"{stem}.csv").columns[:4]) == ["grid", "value", "stderr", "mass"]
            assert {"lower", "upper"} <= set(pd.read_csv(run_dir / f"plot_{stem}.csv").columns)

    def test_markov_resampler_flag(self, output_dir, cir_csv):
        """
        GOAL: Pass --resampler through to the Markov test.

        GUARANTEES:
          - The chosen resampler is recorded in the result and the manifest config
        """
        call_command(
            "difflab", "test", "--markov", "--resampler", "local_markov", "--n-boot", "2", "--input", str(cir_csv),
            "--seed", "6", "--output-dir", str(output_dir),
        )
        result = json.loads((output_dir / "test-6" / "test_result.json").read_text())
        assert result["diagnostics"]["resampler"] == "local_markov"
        assert read_manifest(output_dir / "test-6")["config"]["resampler"] == "local_markov"

    def test_missing_method_is_a_validation_error(self, output_dir, cir_csv):
        with pytest.raises(CommandError) as exc_info:
            call_command("difflab", "estimate", "--input", str(cir_csv), "--output-dir", str(output_dir))
        assert exc_info.value.returncode == 2

    def test_missing_input_exits_with_io_code(self, output_dir, tmp_path):
        with pytest.raises(CommandError) as exc_info:
            call_command(
                "difflab", "estimate", "--method", "stanton", "--input", str(tmp_path / "absent.csv"),
                "--seed", "1", "--output-dir", str(output_dir),
            )
        assert exc_info.value.returncode == 4
        assert read_manifest(output_dir / "estimate-1")["status"] == "failed"

    def test_unreadable_config(self, output_dir, tmp_path):
        with pytest.raises(CommandError) as exc_info:
            call_command("difflab", "simulate", "--config", str(tmp_path / "nope.json"))
        assert exc_info.value.returncode == 4
