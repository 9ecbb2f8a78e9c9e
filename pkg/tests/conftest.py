import numpy as np
import pytest

from brsflow.flow import build_model, integrate_flow
from brsflow.regulator import TheoryParams


@pytest.fixture(scope="session")
def unit_params():
    return TheoryParams(lambda0=50.0)


@pytest.fixture(scope="session")
def scalar_model(unit_params):
    return build_model({"species": ["h", "B"], "L_max": 1, "N_max": 4}, params=unit_params)


@pytest.fixture(scope="session")
def full_model(unit_params):
    return build_model({"L_max": 1, "N_max": 4}, params=unit_params)


@pytest.fixture(scope="session")
def scalar_state(scalar_model):
    return integrate_flow(scalar_model)


@pytest.fixture(scope="session")
def full_state(full_model):
    return integrate_flow(full_model)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
