import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from passfl.scenario import DeviceProfile, RadioConfig, Scenario, generate_scenario

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def default_scenario():
    return generate_scenario(1, 12)


def make_scenario(positions, num_pas=4, area=(30.0, 20.0), height=3.0, **device_kw):
    devices = tuple(DeviceProfile(tuple(map(float, p)), **device_kw) for p in positions)
    return Scenario(area, height, num_pas, devices, RadioConfig())


@pytest.fixture
def scenario_factory():
    return make_scenario


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
