import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from distvolt import fileio
from distvolt.feeders import data_path

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def scenario8():
    return fileio.load_scenario(data_path("feeder8_static.ini"))


@pytest.fixture(scope="session")
def scenario32():
    return fileio.load_scenario(data_path("feeder32_pvday.ini"))


# Acceptance verdicts, one line per criterion, echoed after the run.
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
