## PyTest configuration and fixtures for the QQL toolkit tests.

import logging
from pathlib import Path
from typing import Callable

import numpy as np
import pytest

from qql import data, envs
from qql.agents import TrainConfig
from qql.data import Dataset
from qql.gumbel import GumbelParams
from utils.validators import RecordValidator, ResultAsserter


## Deterministic grid environment shared by the whole session
@pytest.fixture(scope="session")
def grid_env() -> envs.Grid5Env:
    return envs.make_env('grid5')


@pytest.fixture(scope="session")
def point_env() -> envs.PointMassEnv:
    return envs.make_env('pointmass')


@pytest.fixture(scope="session")
def bandit_env() -> envs.GumbelBanditEnv:
    return envs.make_env('gumbel-bandit')


## Full-coverage uniform-random grid dataset
@pytest.fixture(scope="session")
def grid_dataset(grid_env) -> Dataset:
    dataset = data.generate(grid_env, 'uniform-random', 2000, seed=1)
    logging.info(f"Session grid dataset: {dataset.count} transitions")
    return dataset


## Near-optimal pointmass dataset with Gaussian action noise
@pytest.fixture(scope="session")
def point_dataset(point_env) -> Dataset:
    return data.generate(point_env, 'gaussian-noisy-optimal(0.3)', 1000, seed=2)


@pytest.fixture(scope="session")
def bandit_dataset(bandit_env) -> Dataset:
    return data.generate(bandit_env, 'uniform-random', 500, seed=3)


## Small, fast training configuration for unit and integration tests
@pytest.fixture(scope="function")
def small_config() -> TrainConfig:
    return TrainConfig(hidden_dims=[16, 16], batch_size=32, steps=20, eval_interval=10, eval_episodes=2, seed=7)


## Grid dataset written to a temporary JSONL file
@pytest.fixture(scope="function")
def grid_dataset_file(tmp_path: Path, grid_dataset: Dataset) -> Path:
    return data.save(grid_dataset, tmp_path / "grid.jsonl")


@pytest.fixture(scope="session")
def standard_gumbel() -> GumbelParams:
    return GumbelParams(location=0.0, scale=1.0)


@pytest.fixture(scope="function")
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


## Central finite differences of a scalar function over a flat vector, at chosen coordinates
@pytest.fixture(scope="session")
def finite_difference() -> Callable:
    def numeric(f: Callable[[np.ndarray], float], x: np.ndarray, coords, h: float = 1e-6) -> np.ndarray:
        out = np.zeros(len(coords))
        for k, i in enumerate(coords):
            plus, minus = x.copy(), x.copy()
            plus[i] += h
            minus[i] -= h
            out[k] = (f(plus) - f(minus)) / (2.0 * h)
        return out

    return numeric


## Provide the document validator for the entire test session
@pytest.fixture(scope="session")
def validator() -> RecordValidator:
    return RecordValidator()


## Provide the numeric asserter for the entire test session
@pytest.fixture(scope="session")
def asserter() -> ResultAsserter:
    return ResultAsserter()
