"""
Pydantic schemas for run configuration.

`RunConfig` is what `manage.py difflab` resolves from `--config` JSON plus
command-line flags. It is echoed verbatim into every run manifest, so a run
can be repeated from its manifest alone.
"""

from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple, Union, get_args

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

Command = Literal["simulate", "estimate", "test", "price", "spd", "calibrate"]
FamilyName = Literal["gbm", "vasicek", "cir", "ckls"]
KernelName = Literal["epanechnikov", "gaussian", "one_sided_epanechnikov"]
Calendar = Literal["years", "days252", "weeks52", "months12"]

EstimateMethod = Literal[
    "stanton",
    "fan-yao",
    "order-k",
    "fixed-delta",
    "invariant-density",
    "transition-density",
    "time-varying",
    "semiparametric",
]
CalibrateMethod = Literal["pseudo-mle", "exact-mle", "gmm", "indirect", "minimum-distance"]
TestKind = Literal["glr-transition", "distance", "markov", "invariant-density", "glr-constancy"]


class PositionConfig(BaseModel):
    """
    GOAL: One portfolio leg as written in a JSON config.

    GUARANTEES:
      - options carry a positive strike; cash legs carry an amount
    """
    model_config = ConfigDict(extra="forbid")

    kind: Literal["call", "put", "cash"]
    strike: Optional[float] = Field(default=None, gt=0)
    quantity: float = 1.0
    amount: float = 0.0

    @model_validator(mode="after")
    def _strike_for_options(self) -> "PositionConfig":
        if self.kind != "cash" and self.strike is None:
            raise ValueError(f"{self.kind} leg requires a strike")
        return self


class RunConfig(BaseModel):
    """
    GOAL: Validate the full configuration of one CLI command.

    PARAMETERS (grouped):
      command/input/output_dir/output_format/seed - run plumbing
      calendar/allow_gaps - series ingestion
      family/params/scheme/x0/delta/n_steps/substeps/compare_schemes - simulation
      method/kernel/h/h2/k/allow_high_order/grid_points - estimation
      test_kind/norm/resampler/n_boot/truncation/family - testing
      a_values/two_step/n_sim/theta_grid - calibration
      spot/strike/portfolio/rate/maturity/dividend_yield/n_paths/steps - pricing
      target_spot/target_maturity/h_moneyness/h_maturity/exact_grid/renormalize - SPD

    RAISES:
      pydantic.ValidationError - converted by apps.core.validation.validate_config

    GUARANTEES:
      - commands that read data have an input path
      - bandwidths, step counts and rates are in range
    """
    model_config = ConfigDict(extra="forbid")

    command: Command
    input: Optional[Path] = None
    output_dir: Path = Path("./runs")
    output_format: Literal["csv", "json"] = "csv"
    seed: Optional[int] = Field(default=None, ge=0, lt=2**63)

    calendar: Calendar = "years"
    allow_gaps: bool = False

    family: FamilyName = "cir"
    params: Dict[str, float] = Field(default_factory=dict)
    scheme: Literal["euler", "order_one", "derivative_free", "exact"] = "euler"
    x0: Union[float, Literal["stationary"]] = "stationary"
    delta: float = Field(default=1.0 / 12.0, gt=0)
    n_steps: int = Field(default=1000, ge=1)
    substeps: int = Field(default=1, ge=1)
    compare_schemes: bool = False

    method: Optional[str] = None
    kernel: KernelName = "epanechnikov"
    h: Optional[float] = Field(default=None, gt=0)
    h2: Optional[float] = Field(default=None, gt=0)
    k: int = Field(default=1, ge=1)
    allow_high_order: bool = False
    grid_points: Optional[int] = Field(default=None, ge=5)

    test_kind: Optional[TestKind] = None
    norm: Literal["L2_density", "L2_cdf"] = "L2_density"
    resampler: Literal["block", "local_markov"] = "block"
    n_boot: Optional[int] = Field(default=None, ge=1)
    truncation: Optional[Tuple[float, float]] = None

    a_values: List[float] = Field(default_factory=lambda: [1.0, 5.0, 10.0, 20.0])
    two_step: bool = False
    n_sim: int = Field(default=20, ge=1)
    theta_grid: Dict[str, List[float]] = Field(default_factory=dict)

    spot: float = Field(default=100.0, gt=0)
    strike: Optional[float] = Field(default=None, gt=0)
    portfolio: List[PositionConfig] = Field(default_factory=list)
    rate: float = 0.0
    maturity: float = Field(default=1.0, gt=0)
    dividend_yield: float = 0.0
    n_paths: int = Field(default=100_000, ge=2)
    steps: int = Field(default=50, ge=1)

    target_spot: Optional[float] = Field(default=None, gt=0)
    target_maturity: Optional[float] = Field(default=None, gt=0)
    h_moneyness: float = Field(default=0.05, gt=0)
    h_maturity: float = Field(default=0.25, gt=0)
    exact_grid: bool = False
    renormalize: bool = False

    @field_validator("a_values")
    @classmethod
    def _positive_a(cls, value: List[float]) -> List[float]:
        if not value or any(a <= 0 for a in value):
            raise ValueError("a_values must be a non-empty list of positive reals")
        return value

    @field_validator("truncation")
    @classmethod
    def _ordered_truncation(cls, value: Optional[Tuple[float, float]]) -> Optional[Tuple[float, float]]:
        if value is not None and not value[0] < value[1]:
            raise ValueError("truncation must be (lower, upper) with lower < upper")
        return value

    @model_validator(mode="after")
    def _command_requirements(self) -> "RunConfig":
        if self.command in {"estimate", "test", "spd", "calibrate"} and self.input is None:
            raise ValueError(f"command '{self.command}' requires an input file")
        if self.command == "estimate" and self.method not in get_args(EstimateMethod):
            raise ValueError(f"estimate method must be one of {get_args(EstimateMethod)}")
        if self.command == "calibrate" and self.method not in get_args(CalibrateMethod):
            raise ValueError(f"calibrate method must be one of {get_args(CalibrateMethod)}")
        if self.command == "test" and self.test_kind is None:
            raise ValueError("command 'test' requires test_kind")
        if self.command == "price" and self.strike is None and not self.portfolio:
            raise ValueError("command 'price' requires a strike or a portfolio")
        return self
