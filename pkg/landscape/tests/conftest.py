from __future__ import annotations

import numpy as np
import pytest

from qubit_landscape.dynamics import ControlVector, SystemParams, TimeGrid


@pytest.fixture
def params() -> SystemParams:
    return SystemParams()


@pytest.fixture
def unital() -> SystemParams:
    return SystemParams(gamma=0.0)


@pytest.fixture
def grid() -> TimeGrid:
    return TimeGrid.regular(5.0, 10)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def random_controls(rng: np.random.Generator, M: int = 10, scale: float = 1.0) -> ControlVector:
    return ControlVector(rng.uniform(-scale, scale, M), rng.uniform(-scale, scale, M))
