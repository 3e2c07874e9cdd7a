import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from leafgeom import model_zoo as mz

settings.register_profile("leafgeom", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("leafgeom")


@pytest.fixture(scope="session")
def hyperbolic():
    return mz.build("hyperbolic_product")


@pytest.fixture(scope="session")
def heisenberg():
    return mz.build("heisenberg")


@pytest.fixture(scope="session")
def sphere():
    return mz.build("sphere_product")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


@pytest.fixture
def report(capsys):
    """Print one PASS/FAIL line for an acceptance criterion and record it for the summary."""

    def emit(number, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} criterion {number:>2}: {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        return passed

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
