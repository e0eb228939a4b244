"""
Order-k difference schemes for drift and squared-volatility responses.

Coefficients are kept as exact fractions; float views are derived from them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import numpy.typing as npt

from apps.core.exceptions import ValidationError
from apps.sde.paths import SamplePath

FloatArray = npt.NDArray[np.float64]

MAX_ORDER = 5


"""
GOAL: Coefficients and variance-inflation factors of the order-k scheme.

PARAMETERS:
  order: int - k
  coefficients: tuple[Fraction, ...] - a_{k,j} = (-1)^(j+1) C(k, j) / j, j = 1..k
  increment_weights: tuple[Fraction, ...] - b_m = sum_{j >= m} a_{k,j}
  v1: Fraction - Drift variance factor sum_m b_m^2
  v2: Fraction - Squared-difference variance factor trace(A^2)

GUARANTEES:
  - sum_j j a_{k,j} = 1
  - k = 1 gives a = [1], v1 = v2 = 1
"""
@dataclass(frozen=True)
class DifferenceScheme:
    order: int
    coefficients: tuple[Fraction, ...]
    increment_weights: tuple[Fraction, ...]
    v1: Fraction
    v2: Fraction

    @property
    def a(self) -> FloatArray:
        return np.array([float(c) for c in self.coefficients])

    @property
    def b(self) -> FloatArray:
        return np.array([float(c) for c in self.increment_weights])

    def responses(self, path: SamplePath) -> tuple[FloatArray, FloatArray, FloatArray]:
        """
        (X_i, Y*_i, Z*_i) over every i whose k forward transitions are all valid.

        Y* = delta^-1 sum_j a_j (X_{i+j} - X_i), Z* = delta^-1 sum_j a_j (X_{i+j} - X_i)^2
        """
        k = self.order
        if path.n < k:
            raise ValidationError("path shorter than the scheme order", details={"order": k, "transitions": path.n})
        mask = path.transition_mask(k)
        x = path.values
        start = x[: x.size - k]
        y = np.zeros(start.size)
        z = np.zeros(start.size)
        for j, a in enumerate(self.a, start=1):
            diff = x[j : x.size - k + j] - start
            y += a * diff
            z += a * diff * diff
        return start[mask], y[mask] / path.delta, z[mask] / path.delta


def _coefficient(k: int, j: int) -> Fraction:
    return Fraction((-1) ** (j + 1) * math.comb(k, j), j)


"""
GOAL: Build the order-k difference scheme.

PARAMETERS:
  k: int - Order - 1..5, larger only with allow_high_order
  allow_high_order: bool - Permit k > 5

RETURNS:
  DifferenceScheme - Exact coefficients and factors

RAISES:
  ValidationError: k < 1, or k > 5 without the override
"""
def difference_scheme(k: int, allow_high_order: bool = False) -> DifferenceScheme:
    if k < 1 or (k > MAX_ORDER and not allow_high_order):
        raise ValidationError(
            f"difference order must be in [1, {MAX_ORDER}]", details={"order": k, "allow_high_order": allow_high_order}
        )
    coefficients = tuple(_coefficient(k, j) for j in range(1, k + 1))
    weights = tuple(sum(coefficients[m:], Fraction(0)) for m in range(k))
    v1 = sum((b * b for b in weights), Fraction(0))
    # A = sum_j a_j 1_{<=j} 1_{<=j}^T, so A[m, l] = sum_{j >= max(m, l)} a_j = b_max(m, l)
    v2 = sum((weights[max(m, l)] ** 2 for m in range(k) for l in range(k)), Fraction(0))
    return DifferenceScheme(k, coefficients, weights, v1, v2)
