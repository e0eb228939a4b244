"""
Counter-based random streams.

A stream is a numpy Philox generator keyed by (seed, stream id, index).
Trajectories, Monte Carlo blocks and bootstrap replicates each get their own
key, so results never depend on how work is scheduled across threads.
"""

from __future__ import annotations

import numpy as np

# Stream ids; part of the reproducibility contract, never renumber.
SHOCKS = 0
INITIAL_STATE = 1
EXACT_TRANSITIONS = 2
MONTE_CARLO = 3
BOOTSTRAP = 4
RESAMPLING = 5

_SEED_MASK = (1 << 64) - 1


def _key(seed: int, *keys: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed) & _SEED_MASK, *(int(k) for k in keys)])


"""
GOAL: Build the generator for one (seed, stream, index) key.

PARAMETERS:
  seed: int - 64-bit user seed - Negative values are masked to 64 bits
  stream: int - Stream id from this module - >= 0
  index: int - Path id, block id or replicate id - >= 0

RETURNS:
  np.random.Generator - Philox-backed generator

RAISES:
  None

GUARANTEES:
  - Equal arguments give bit-identical draws on every platform numpy supports
"""
def stream(seed: int, stream_id: int, index: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(_key(seed, stream_id, index)))


def spawn_seeds(seed: int, n: int) -> list[int]:
    """Derive n independent 63-bit seeds (bootstrap replicates, simulated datasets)."""
    children = _key(seed, BOOTSTRAP).spawn(n)
    return [int(child.generate_state(1, np.uint64)[0] >> np.uint64(1)) for child in children]


def fresh_seed() -> int:
    """A new 63-bit seed from OS entropy; callers record it in the run manifest."""
    return int(np.random.SeedSequence().generate_state(1, np.uint64)[0] >> np.uint64(1))
