import sys

import numpy as np
import pytest

from driftplan.flowfield import VelocityField, make_patchwork


@pytest.fixture
def patchwork():
    field, labels = make_patchwork(20, 20, regions=4, seed=3)
    return field, labels


@pytest.fixture
def uniform_east():
    u = np.full((8, 10), 0.5)
    return VelocityField(u, np.zeros_like(u), cell_size=100.0)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
