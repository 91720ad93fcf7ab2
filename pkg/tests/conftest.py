import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from iodmle import frames, scenario

settings.register_profile(
    "default", max_examples=100, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def sites():
    return scenario.make_sites()


@pytest.fixture(scope="session")
def truths():
    return [frames.kepler_to_cartesian(el) for el in scenario.reference_objects()]


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import REPORT

    if not REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(REPORT):
        terminalreporter.write_line(REPORT[number])
