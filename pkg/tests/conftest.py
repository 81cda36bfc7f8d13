import numpy as np
import pytest

from matchbench import MatchedSample, counterexample_market, simulate_market


@pytest.fixture(scope="session")
def counterexample_sample_1m() -> MatchedSample:
    """One large benchmark-market sample shared by the Monte Carlo checks."""
    return simulate_market(counterexample_market(), 1_000_000, seed=20240523)


@pytest.fixture()
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
