import numpy as np
import pytest
from hypothesis import settings

from varipath.grid import Domain, make_grid

settings.register_profile("varipath", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("varipath")


@pytest.fixture(scope="session")
def unit_grid():
    return make_grid(Domain.interval(0.0, 1.0), 257)


@pytest.fixture(scope="session")
def radial_grid():
    return make_grid(Domain.radial(2, 8.0), 513)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects one (criterion, passed, detail) line per acceptance check."""
    return request.config.stash[ACCEPTANCE]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(lines, key=lambda x: x[0]):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
