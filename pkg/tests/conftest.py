import numpy as np
import pytest

from lsmcpde import ExerciseSchedule, heston_reference, multi_heston_reference


@pytest.fixture(scope="session")
def heston():
    return heston_reference()


@pytest.fixture(scope="session")
def multi_heston():
    return multi_heston_reference()


@pytest.fixture(scope="session")
def schedule():
    return ExerciseSchedule(1.0, 12)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
