"""Shared fixtures and a disk cache for expensive simulation studies."""

import hashlib
import pickle
from pathlib import Path

import numpy as np
import pytest

from medsel import sim
from medsel.data import ResidualizedData

CACHE_DIR = Path(__file__).parent / "_cache"


def cached_study(**kwargs) -> sim.SimulationResult:
    """Run (or reload) a simulation study keyed by its full argument list.

    Results are deterministic given the arguments, so a disk cache makes
    repeated test runs cheap. Delete tests/_cache to force recomputation.
    """
    spec_kwargs = kwargs.pop("spec")
    key_src = repr(sorted(spec_kwargs.items())) + repr(sorted(kwargs.items()))
    key = hashlib.sha256(key_src.encode()).hexdigest()[:24]
    path = CACHE_DIR / f"study_{key}.pkl"
    if path.exists():
        with open(path, "rb") as fh:
            return pickle.load(fh)
    result = sim.run_study(sim.ScenarioSpec(**spec_kwargs), **kwargs)
    CACHE_DIR.mkdir(exist_ok=True)
    with open(path, "wb") as fh:
        pickle.dump(result, fh)
    return result


def random_residuals(rng: np.random.Generator, n: int, p: int) -> ResidualizedData:
    """Generic dense residualized data with centered columns."""
    rd = rng.normal(size=n)
    rm = rng.normal(size=(n, p))
    ry = 0.7 * rd + rm @ rng.normal(size=p) + rng.normal(size=n)
    return ResidualizedData(ry=ry, rd=rd, rm=rm)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_res(rng):
    return random_residuals(rng, n=80, p=4)
