"""
Option positions, payoffs and observed call quotes.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np
import numpy.typing as npt
import pandas as pd

from apps.core.exceptions import ValidationError

logger = logging.getLogger(__name__)

FloatArray = npt.NDArray[np.float64]

QUOTE_COLUMNS = ("S", "K", "T", "r", "delta", "C")


class PositionKind(str, enum.Enum):
    CALL = "call"
    PUT = "put"
    CASH = "cash"


"""
GOAL: One leg of a European portfolio held to maturity.

PARAMETERS:
  kind: PositionKind - call, put or cash
  quantity: float - Signed number of contracts; negative is short
  strike: Optional[float] - Exercise price for options - > 0
  cash_amount: float - Amount paid at maturity for cash legs

RAISES:
  ValidationError: option without a positive strike, non-finite quantity or amount

GUARANTEES:
  - payoff is piecewise linear in x_T with a single kink at the strike
"""
@dataclass(frozen=True)
class Position:
    kind: PositionKind
    quantity: float = 1.0
    strike: Optional[float] = None
    cash_amount: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", PositionKind(self.kind))
        if not (math.isfinite(self.quantity) and math.isfinite(self.cash_amount)):
            raise ValidationError("position quantity and cash amount must be finite")
        if self.kind is PositionKind.CASH:
            object.__setattr__(self, "strike", None)
            return
        if self.strike is None or not (math.isfinite(self.strike) and self.strike > 0):
            raise ValidationError(
                f"{self.kind.value} positions need a strike > 0", details={"strike": self.strike}
            )

    @classmethod
    def call(cls, strike: float, quantity: float = 1.0) -> "Position":
        return cls(PositionKind.CALL, quantity, strike)

    @classmethod
    def put(cls, strike: float, quantity: float = 1.0) -> "Position":
        return cls(PositionKind.PUT, quantity, strike)

    @classmethod
    def cash(cls, amount: float) -> "Position":
        return cls(PositionKind.CASH, 1.0, None, amount)

    def payoff(self, x_t: npt.ArrayLike) -> FloatArray:
        x = np.asarray(x_t, dtype=np.float64)
        if self.kind is PositionKind.CASH:
            return np.full_like(x, self.quantity * self.cash_amount)
        assert self.strike is not None
        if self.kind is PositionKind.CALL:
            return self.quantity * np.maximum(x - self.strike, 0.0)
        return self.quantity * np.maximum(self.strike - x, 0.0)


"""
GOAL: Value at maturity of a portfolio of positions.

PARAMETERS:
  portfolio: Sequence[Position] - Legs, possibly empty
  x_t: float | array - Terminal asset value(s) - >= 0

RETURNS:
  float | FloatArray - Sum of leg payoffs, same shape as x_t

RAISES:
  ValidationError: negative terminal value
"""
def payoff(portfolio: Sequence[Position], x_t: npt.ArrayLike) -> FloatArray | float:
    x = np.asarray(x_t, dtype=np.float64)
    if np.any(x < 0):
        raise ValidationError("terminal asset values must be >= 0")
    total = np.zeros_like(x)
    for position in portfolio:
        total = total + position.payoff(x)
    return float(total) if total.ndim == 0 else total


def call_bounds(S: float, K: float, T: float, r: float, delta_yield: float = 0.0) -> tuple[float, float]:
    """No-arbitrage (lower, upper) bounds for a European call."""
    discounted_spot = S * math.exp(-delta_yield * T)
    return max(discounted_spot - K * math.exp(-r * T), 0.0), discounted_spot


"""
GOAL: One observed European call price with its market inputs.

PARAMETERS:
  S: float - Spot - > 0
  K: float - Strike - > 0
  T: float - Maturity in years - > 0
  r: float - Continuously compounded risk-free rate
  delta_yield: float - Dividend yield
  C: float - Observed call price; negative prices are kept and flagged

RAISES:
  ValidationError: non-positive S, K or T, or non-finite fields

GUARANTEES:
  - forward = S exp((r - delta) T), computed once
  - violation names the breached bound, None inside the bounds
"""
@dataclass(frozen=True)
class OptionQuote:
    S: float
    K: float
    T: float
    r: float
    delta_yield: float
    C: float

    def __post_init__(self) -> None:
        values = {"S": self.S, "K": self.K, "T": self.T, "r": self.r, "delta": self.delta_yield, "C": self.C}
        bad = [name for name, value in values.items() if not math.isfinite(value)]
        if bad:
            raise ValidationError(f"quote fields must be finite: {', '.join(bad)}", details={"fields": bad})
        for name in ("S", "K", "T"):
            if values[name] <= 0:
                raise ValidationError(f"quote {name} must be > 0", details={name: values[name]})

    @cached_property
    def forward(self) -> float:
        return self.S * math.exp((self.r - self.delta_yield) * self.T)

    @property
    def moneyness(self) -> float:
        """F / K."""
        return self.forward / self.K

    @property
    def bounds(self) -> tuple[float, float]:
        return call_bounds(self.S, self.K, self.T, self.r, self.delta_yield)

    @property
    def violation(self) -> Optional[str]:
        lower, upper = self.bounds
        if self.C <= lower:
            return "lower"
        if self.C >= upper:
            return "upper"
        return None


@dataclass(frozen=True)
class QuoteSet:
    quotes: tuple[OptionQuote, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(self, "quotes", tuple(self.quotes))
        flagged = self.flagged
        if flagged:
            logger.warning("%d of %d quotes violate no-arbitrage bounds", len(flagged), len(self.quotes))

    @classmethod
    def of(cls, quotes: Iterable[OptionQuote]) -> "QuoteSet":
        return cls(tuple(quotes))

    def __len__(self) -> int:
        return len(self.quotes)

    def __iter__(self):
        return iter(self.quotes)

    def _column(self, name: str) -> FloatArray:
        return np.array([getattr(q, name) for q in self.quotes], dtype=np.float64)

    @property
    def spot(self) -> FloatArray:
        return self._column("S")

    @property
    def strike(self) -> FloatArray:
        return self._column("K")

    @property
    def maturity(self) -> FloatArray:
        return self._column("T")

    @property
    def rate(self) -> FloatArray:
        return self._column("r")

    @property
    def dividend_yield(self) -> FloatArray:
        return self._column("delta_yield")

    @property
    def price(self) -> FloatArray:
        return self._column("C")

    @property
    def forward(self) -> FloatArray:
        return self._column("forward")

    @property
    def flagged(self) -> list[int]:
        """Indices of quotes outside the no-arbitrage bounds."""
        return [i for i, q in enumerate(self.quotes) if q.violation is not None]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "S": self.spot,
                "K": self.strike,
                "T": self.maturity,
                "r": self.rate,
                "delta": self.dividend_yield,
                "C": self.price,
                "F": self.forward,
                "violation": [q.violation or "" for q in self.quotes],
            }
        )

    @classmethod
    def from_frame(cls, frame: pd.DataFrame) -> "QuoteSet":
        missing = [c for c in QUOTE_COLUMNS if c not in frame.columns]
        if missing:
            raise ValidationError(
                f"quote table is missing columns: {', '.join(missing)}", details={"expected": list(QUOTE_COLUMNS)}
            )
        return cls.of(
            OptionQuote(float(row.S), float(row.K), float(row.T), float(row.r), float(row.delta), float(row.C))
            for row in frame.itertuples(index=False)
        )
