import numpy as np
import pytest
from hypothesis import settings

from ttsa.fields import make_scenario
from ttsa.sa_engine import NoiseModel, default_schedule, run_batch

settings.register_profile("ttsa", deadline=None, max_examples=40)
settings.load_profile("ttsa")


@pytest.fixture(scope="session")
def s1():
    return make_scenario("S1")


@pytest.fixture(scope="session")
def s2():
    return make_scenario("S2")


@pytest.fixture(scope="session")
def s3():
    return make_scenario("S3")


@pytest.fixture(scope="session")
def s1_records(s1):
    """Two S1 seeds, long enough for windows at steps 100 and 1000."""
    res = run_batch(s1.instance, default_schedule(), 20_000, [0, 1], NoiseModel("gaussian", 0.1))
    return res.ordered([0, 1])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
