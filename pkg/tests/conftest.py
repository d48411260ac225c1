import pytest

from acceptance_report import REPORT


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running Monte-Carlo or sweep test")


def pytest_terminal_summary(terminalreporter):
    if not REPORT:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(REPORT):
        terminalreporter.write_line(REPORT[number])


@pytest.fixture
def rng():
    import numpy as np

    return np.random.default_rng(20240611)
