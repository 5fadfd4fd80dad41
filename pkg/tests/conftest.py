import os

import pytest
from hypothesis import HealthCheck, settings

from adaptsync.engine import run
from adaptsync.scenario import load_scenario

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=200,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def theorem1():
    sc = load_scenario("theorem1_demo")
    return sc, run(sc)


@pytest.fixture(scope="session")
def static():
    sc = load_scenario("static_demo")
    return sc, run(sc)


@pytest.fixture(scope="session")
def disturbance():
    sc = load_scenario("disturbance_demo")
    return sc, run(sc)
