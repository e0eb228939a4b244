"""
Pytest configuration and fixtures shared by all difflab test modules.

Model fixtures use the Chapman-Pearson CIR parameters and a slow Vasicek
short-rate model; path fixtures are exact simulations with fixed seeds, so
every test sees the same data on every run.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import pytest

from apps.core.dtos import TestResult
from apps.core.rng import EXACT_TRANSITIONS, stream
from apps.sde.catalog import ModelSpec
from apps.sde.paths import SamplePath
from apps.simulation.plans import Scheme, SimPlan
from apps.simulation.services import simulate

CIR_PARAMS = {"kappa": 0.21459, "alpha": 0.08571, "sigma": 0.07830}
VASICEK_PARAMS = {"kappa": 0.5, "alpha": 0.06, "sigma": 0.02}


@pytest.fixture(autouse=True)
def _single_thread(settings):
    """
    GOAL: Run numerical code serially under test unless a test opts into threads.

    GUARANTEES:
      - DIFFLAB_THREADS is 1 for the duration of each test
    """
    settings.DIFFLAB_THREADS = 1
    yield


@pytest.fixture
def vasicek_model() -> ModelSpec:
    return ModelSpec.vasicek(**VASICEK_PARAMS)


@pytest.fixture
def cir_model() -> ModelSpec:
    return ModelSpec.cir(**CIR_PARAMS)


@pytest.fixture
def gbm_model() -> ModelSpec:
    return ModelSpec.gbm(mu=0.05, sigma=0.2)


"""
GOAL: Build an exactly simulated stationary path for a closed-form model.

PARAMETERS:
  model: ModelSpec - GBM, Vasicek or CIR
  delta: float - Sampling step in years
  n_steps: int - Number of transitions
  seed: int - Stream seed

RETURNS:
  SamplePath - length n_steps + 1
"""
def exact_path(model: ModelSpec, delta: float, n_steps: int, seed: int, x0: float | str = "stationary") -> SamplePath:
    plan = SimPlan(model=model, x0=x0, delta=delta, n_steps=n_steps, seed=seed, scheme=Scheme.EXACT)
    return simulate(plan)


@pytest.fixture
def vasicek_path(vasicek_model) -> SamplePath:
    """Weekly stationary Vasicek path, 5000 transitions."""
    return exact_path(vasicek_model, 1.0 / 52.0, 5000, seed=20240101)


@pytest.fixture
def cir_path(cir_model) -> SamplePath:
    """Monthly stationary CIR path, 3000 transitions."""
    return exact_path(cir_model, 1.0 / 12.0, 3000, seed=20240202)


@pytest.fixture
def cir_weekly_path(cir_model) -> SamplePath:
    """Weekly stationary CIR path, 5000 transitions."""
    return exact_path(cir_model, 1.0 / 52.0, 5000, seed=20240303)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture
def output_dir(tmp_path: Path) -> Path:
    """Fresh run directory root for CLI tests."""
    target = tmp_path / "runs"
    target.mkdir()
    return target


@pytest.fixture
def make_exact_path():
    """Factory fixture around exact_path for tests that need their own parameters."""
    return exact_path


"""
GOAL: Seeds for the replications of a Monte Carlo study.

PARAMETERS:
  root: int - Study seed
  count: int - Number of replications

RETURNS:
  list[int] - Independent seeds drawn from one counter-based stream
"""
def study_seeds(root: int, count: int) -> list[int]:
    return [int(s) for s in stream(root, EXACT_TRANSITIONS).integers(0, 2**62, size=count)]


@pytest.fixture
def replication_seeds():
    return study_seeds


@pytest.fixture
def rejection_rate(settings):
    """
    GOAL: Empirical rejection frequency of a test over simulated replications.

    PARAMETERS (of the returned callable):
      run: Callable[[int], TestResult] - Simulates one data set from a seed and tests it
      seeds: Sequence[int] - One seed per replication
      level: float - Nominal level; a replication rejects when p <= level

    GUARANTEES:
      - Bootstrap replicates run on all CPUs for the duration of the study
    """
    settings.DIFFLAB_THREADS = os.cpu_count() or 1

    def measure(run: Callable[[int], TestResult], seeds: Sequence[int], level: float = 0.05) -> float:
        return float(np.mean([run(seed).p_value <= level for seed in seeds]))

    return measure
