import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from abreulab.geometry import DomainPair, discretize  # noqa: E402


@pytest.fixture(scope="session")
def unit_pair():
    return DomainPair.unit_default()


@pytest.fixture(scope="session")
def rc_pair():
    return DomainPair.rochet_chone_default()


@pytest.fixture(scope="session")
def unit_disc(unit_pair):
    return discretize(unit_pair, 1 / 32)


@pytest.fixture(scope="session")
def rc_disc(rc_pair):
    return discretize(rc_pair, 1 / 32)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.summary_line(n))
