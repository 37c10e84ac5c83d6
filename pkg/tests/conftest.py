import sys

import pytest

from nvmsim.calibration import load_calibration
from nvmsim.cli import FITTED_CAL
from nvmsim.network import shipped_mobilenet_v2


@pytest.fixture(scope="session")
def fitted_cal():
    return load_calibration(FITTED_CAL)


@pytest.fixture(scope="session")
def mnv2():
    return shipped_mobilenet_v2()



def pytest_terminal_summary(terminalreporter):
    mod = next((m for name, m in sys.modules.items() if name.endswith("test_acceptance")), None)
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
