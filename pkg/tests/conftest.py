import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from npenas.space import build_microbench

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def micro():
    return build_microbench(0)


@pytest.fixture(scope="session")
def micro_space(micro):
    return micro[0]


@pytest.fixture(scope="session")
def micro_oracle(micro):
    return micro[1]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is not None and acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in acceptance.RESULTS:
            terminalreporter.write_line(line)
