"""
Kernel functions and bandwidth-carrying kernel specifications.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
import numpy.typing as npt

from apps.core.exceptions import ValidationError

FloatArray = npt.NDArray[np.float64]

_SQRT_2PI = math.sqrt(2.0 * math.pi)


class KernelShape(str, enum.Enum):
    EPANECHNIKOV = "epanechnikov"
    GAUSSIAN = "gaussian"
    ONE_SIDED_EPANECHNIKOV = "one_sided_epanechnikov"


# R(K) = int K^2
ROUGHNESS = {
    KernelShape.EPANECHNIKOV: 0.6,
    KernelShape.GAUSSIAN: 1.0 / (2.0 * math.sqrt(math.pi)),
    KernelShape.ONE_SIDED_EPANECHNIKOV: 1.2,
}


def kernel_values(shape: KernelShape, u: npt.ArrayLike) -> FloatArray:
    """K(u) for a standardized argument u."""
    u = np.asarray(u, dtype=np.float64)
    if shape is KernelShape.GAUSSIAN:
        return np.exp(-0.5 * u * u) / _SQRT_2PI
    inside = 0.75 * (1.0 - u * u)
    if shape is KernelShape.EPANECHNIKOV:
        return np.where(np.abs(u) < 1.0, inside, 0.0)
    # support (-1, 0), open at both ends
    return np.where((u > -1.0) & (u < 0.0), 2.0 * inside, 0.0)


"""
GOAL: A kernel shape together with its bandwidth.

PARAMETERS:
  shape: KernelShape - epanechnikov, gaussian or one_sided_epanechnikov
  bandwidth: float - h in the regressor's units - > 0

RAISES:
  ValidationError: h <= 0 or not finite

GUARANTEES:
  - weights(d) = K(d / h) / h integrates to one in d
  - the one-sided kernel only weights d in (-h, 0)
"""
@dataclass(frozen=True)
class KernelSpec:
    shape: KernelShape
    bandwidth: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "shape", KernelShape(self.shape))
        if not (math.isfinite(self.bandwidth) and self.bandwidth > 0):
            raise ValidationError("bandwidth must be > 0", details={"bandwidth": self.bandwidth})
        object.__setattr__(self, "bandwidth", float(self.bandwidth))

    @property
    def roughness(self) -> float:
        return ROUGHNESS[self.shape]

    @property
    def compact(self) -> bool:
        return self.shape is not KernelShape.GAUSSIAN

    @property
    def one_sided(self) -> bool:
        return self.shape is KernelShape.ONE_SIDED_EPANECHNIKOV

    def weights(self, d: npt.ArrayLike) -> FloatArray:
        """K_h(d) = K(d / h) / h."""
        return kernel_values(self.shape, np.asarray(d, dtype=np.float64) / self.bandwidth) / self.bandwidth

    def with_bandwidth(self, bandwidth: float) -> "KernelSpec":
        return KernelSpec(self.shape, bandwidth)
