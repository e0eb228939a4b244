"""
GOAL: Run one difflab pipeline from the command line.

PARAMETERS:
  subcommand: str - simulate, estimate, test, calibrate, price or spd
  --config: Optional[path] - JSON RunConfig; flags given on the command line override it
  per-command flags - see `manage.py difflab <subcommand> --help`

RETURNS:
  None - Prints the run directory and manifest status

RAISES:
  CommandError: with returncode 2 (validation), 3 (numerical failure) or 4 (I/O)

GUARANTEES:
  - Every run, successful or not, leaves <output_dir>/<command>-<seed>/manifest.json
  - Input files are only read
"""
from __future__ import annotations

import argparse
import json
import logging
from pathlib import Path
from typing import Any

from django.core.management.base import BaseCommand, CommandError

from apps.core import conf
from apps.core.exceptions import EXIT_IO, DiffLabError
from apps.core.schemas import RunConfig
from apps.core.validation import validate_config
from apps.experiments.services import run

logger = logging.getLogger(__name__)

SUPPRESS = argparse.SUPPRESS
CONFIG_KEYS = frozenset(RunConfig.model_fields)


def _parameter(text: str) -> tuple[str, float]:
    name, sep, value = text.partition("=")
    if not sep:
        raise argparse.ArgumentTypeError(f"expected name=value, got {text!r}")
    try:
        return name.strip(), float(value)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"parameter {name} needs a number") from exc


def _start(text: str) -> Any:
    return text if text == "stationary" else float(text)


class Command(BaseCommand):
    help = "Simulate, estimate, test, calibrate, price or extract state-price densities"

    def add_arguments(self, parser) -> None:
        """
        One sub-parser per command; every option defaults to "not given" so --config values survive.
        """
        commands = parser.add_subparsers(dest="subcommand", required=True)

        simulate = self._command(commands, "simulate", "Simulate a path from a named model")
        self._model_flags(simulate)
        simulate.add_argument("--scheme", choices=["euler", "order_one", "derivative_free", "exact"], default=SUPPRESS)
        simulate.add_argument("--x0", type=_start, default=SUPPRESS, help="Initial state or 'stationary'")
        simulate.add_argument("--delta", type=float, default=SUPPRESS, help="Observation step in years")
        simulate.add_argument("--n-steps", dest="n_steps", type=int, default=SUPPRESS)
        simulate.add_argument("--substeps", type=int, default=SUPPRESS)
        simulate.add_argument("--compare-schemes", dest="compare_schemes", action="store_true", default=SUPPRESS)

        estimate = self._command(commands, "estimate", "Nonparametric drift, volatility or transition density")
        self._series_flags(estimate)
        self._bandwidth_flags(estimate)
        estimate.add_argument(
            "--method",
            choices=["stanton", "fan-yao", "order-k", "fixed-delta", "invariant-density", "transition-density", "time-varying", "semiparametric"],
            default=SUPPRESS,
        )
        estimate.add_argument("--kernel", choices=["epanechnikov", "gaussian"], default=SUPPRESS)
        estimate.add_argument("--k", type=int, default=SUPPRESS, help="Difference-scheme order")
        estimate.add_argument("--allow-high-order", dest="allow_high_order", action="store_true", default=SUPPRESS)
        estimate.add_argument("--grid-points", dest="grid_points", type=int, default=SUPPRESS)

        test = self._command(commands, "test", "Specification, Markov and time-constancy tests")
        self._series_flags(test)
        self._bandwidth_flags(test)
        self._model_flags(test, with_params=False)
        kinds = test.add_mutually_exclusive_group()
        for kind in ("glr-transition", "distance", "markov", "invariant-density", "glr-constancy"):
            kinds.add_argument(f"--{kind}", dest="test_kind", action="store_const", const=kind, default=SUPPRESS)
        test.add_argument("--norm", choices=["L2_density", "L2_cdf"], default=SUPPRESS)
        test.add_argument("--resampler", choices=["block", "local_markov"], default=SUPPRESS, help="Markov-test bootstrap")
        test.add_argument("--n-boot", dest="n_boot", type=int, default=SUPPRESS)

        calibrate = self._command(commands, "calibrate", "Parametric estimation")
        self._series_flags(calibrate)
        self._bandwidth_flags(calibrate)
        self._model_flags(calibrate, with_params=False)
        calibrate.add_argument(
            "--method", choices=["pseudo-mle", "exact-mle", "gmm", "indirect", "minimum-distance"], default=SUPPRESS
        )
        calibrate.add_argument("--a-values", dest="a_values", type=float, nargs="+", default=SUPPRESS)
        calibrate.add_argument("--two-step", dest="two_step", action="store_true", default=SUPPRESS)
        calibrate.add_argument("--n-sim", dest="n_sim", type=int, default=SUPPRESS)
        calibrate.add_argument("--n-boot", dest="n_boot", type=int, default=SUPPRESS)

        price = self._command(commands, "price", "Monte Carlo (and Black-Scholes) prices of a portfolio")
        self._model_flags(price)
        self._market_flags(price)
        price.add_argument("--spot", type=float, default=SUPPRESS)
        price.add_argument("--strike", type=float, default=SUPPRESS, help="Single call; use --config for portfolios")
        price.add_argument("--maturity", type=float, default=SUPPRESS)
        price.add_argument("--n-paths", dest="n_paths", type=int, default=SUPPRESS)
        price.add_argument("--steps", type=int, default=SUPPRESS)

        spd = self._command(commands, "spd", "State-price density from option quotes")
        spd.add_argument("--input", type=Path, default=SUPPRESS, help="CSV with header S,K,T,r,delta,C")
        self._market_flags(spd)
        spd.add_argument("--target-spot", dest="target_spot", type=float, default=SUPPRESS)
        spd.add_argument("--target-maturity", dest="target_maturity", type=float, default=SUPPRESS)
        spd.add_argument("--h-moneyness", dest="h_moneyness", type=float, default=SUPPRESS)
        spd.add_argument("--h-maturity", dest="h_maturity", type=float, default=SUPPRESS)
        spd.add_argument("--h", type=float, default=SUPPRESS, help="Strike bandwidth for a single call curve")
        spd.add_argument("--exact-grid", dest="exact_grid", action="store_true", default=SUPPRESS)
        spd.add_argument("--renormalize", action="store_true", default=SUPPRESS)

    def _command(self, commands, name: str, help_text: str):
        sub = commands.add_parser(name, help=help_text)
        sub.add_argument("--config", type=Path, default=SUPPRESS, help="JSON run configuration")
        sub.add_argument("--output-dir", dest="output_dir", type=Path, default=SUPPRESS)
        sub.add_argument("--format", dest="output_format", choices=["csv", "json"], default=SUPPRESS)
        sub.add_argument("--seed", type=int, default=SUPPRESS)
        return sub

    def _series_flags(self, sub) -> None:
        sub.add_argument("--input", type=Path, default=SUPPRESS, help="CSV with header t,x or date,x")
        sub.add_argument("--calendar", choices=["years", "days252", "weeks52", "months12"], default=SUPPRESS)
        sub.add_argument("--allow-gaps", dest="allow_gaps", action="store_true", default=SUPPRESS)

    def _bandwidth_flags(self, sub) -> None:
        sub.add_argument("--h", type=float, default=SUPPRESS, help="Bandwidth (state, or time for time-domain work)")
        sub.add_argument("--h2", type=float, default=SUPPRESS, help="Second bandwidth (y-direction or volatility)")
        sub.add_argument("--truncation", type=float, nargs=2, default=SUPPRESS, metavar=("LOW", "HIGH"))

    def _model_flags(self, sub, with_params: bool = True) -> None:
        sub.add_argument("--family", choices=["gbm", "vasicek", "cir", "ckls"], default=SUPPRESS)
        if with_params:
            sub.add_argument(
                "--param", dest="params", type=_parameter, action="append", default=SUPPRESS, help="name=value"
            )

    def _market_flags(self, sub) -> None:
        sub.add_argument("--rate", type=float, default=SUPPRESS)
        sub.add_argument("--dividend-yield", dest="dividend_yield", type=float, default=SUPPRESS)

    def _load_config(self, path: Path) -> dict[str, Any]:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise CommandError(f"cannot read config {path}: {exc}", returncode=EXIT_IO) from exc
        except json.JSONDecodeError as exc:
            raise CommandError(f"config {path} is not valid JSON: {exc}", returncode=2) from exc
        if not isinstance(data, dict):
            raise CommandError(f"config {path} must hold a JSON object", returncode=2)
        return data

    def handle(self, *args: Any, **options: Any) -> None:
        """
        Merge --config with flags, validate, run, and map failures to exit codes.
        """
        command = options["subcommand"]
        data: dict[str, Any] = self._load_config(options["config"]) if "config" in options else {}
        flags = {key: value for key, value in options.items() if key in CONFIG_KEYS}
        if "params" in flags:
            flags["params"] = dict(flags["params"])
        if "truncation" in flags:
            flags["truncation"] = tuple(flags["truncation"])
        data.update(flags)
        data.setdefault("output_dir", conf.output_dir())
        data.setdefault("calendar", conf.default_calendar())
        data["command"] = command

        try:
            config = validate_config(RunConfig, data)
        except DiffLabError as exc:
            raise CommandError(exc.message, returncode=exc.exit_code) from exc

        manifest = run(config)
        location = Path(config.output_dir) / f"{command}-{manifest.seed}"
        if manifest.status != "succeeded":
            error = manifest.error or {}
            raise CommandError(
                f"{command} failed [{error.get('error_code')}]: {error.get('message')} (manifest in {location})",
                returncode=int(error.get("exit_code", 1)),
            )
        self.stdout.write(self.style.SUCCESS(f"{command} finished: {len(manifest.artifacts)} artifact(s) in {location}"))
