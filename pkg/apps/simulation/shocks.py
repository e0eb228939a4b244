"""
Per-trajectory random streams.

Each trajectory owns three counter-based streams keyed by (seed, path_id):
Gaussian shocks, the initial-state draw and the auxiliary draws of the exact
CIR sampler. Schemes that read the same shock stream see identical numbers,
so Euler, order-one and exact paths built from one seed are directly
comparable.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from apps.core import rng
from apps.sde.catalog import FloatArray


@dataclass(frozen=True)
class ShockStream:
    seed: int
    path_id: int = 0

    def normals(self, n_steps: int, substeps: int = 1) -> FloatArray:
        """Standard normals indexed [step, substep]."""
        return rng.stream(self.seed, rng.SHOCKS, self.path_id).standard_normal((n_steps, substeps))

    def initial_state(self) -> np.random.Generator:
        return rng.stream(self.seed, rng.INITIAL_STATE, self.path_id)

    def exact_transitions(self) -> np.random.Generator:
        return rng.stream(self.seed, rng.EXACT_TRANSITIONS, self.path_id)


def coarse_normals(shocks: FloatArray) -> FloatArray:
    """Collapse [..., step, substep] normals to one N(0, 1) per step: sum / sqrt(M)."""
    substeps = shocks.shape[-1]
    if substeps == 1:
        return shocks[..., 0]
    return shocks.sum(axis=-1) / np.sqrt(substeps)
