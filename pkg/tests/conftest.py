import numpy as np
import pytest

from vimpc import biped, ccinn, wbo

# one line per acceptance criterion, printed after the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line[1])


@pytest.fixture(scope="session")
def model():
    return biped.default_model()


@pytest.fixture(scope="session")
def stance(model):
    return biped.nominal_stance(model)


@pytest.fixture(scope="session")
def weights():
    return ccinn.load_default()


@pytest.fixture(scope="session")
def wbo_map():
    return wbo.load_default()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
