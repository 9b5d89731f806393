import numpy as np
import pytest

from drmpc.design import ControllerConfig
from drmpc.ftocp import StageCost
from drmpc.lpv_model import benchmark_model


@pytest.fixture(scope="session")
def model():
    return benchmark_model()


@pytest.fixture(scope="session")
def cost():
    return StageCost(np.eye(2), np.eye(1))


@pytest.fixture(scope="session")
def cfg3():
    return ControllerConfig(deadbeat_m=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        ok, detail = RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {detail}")
