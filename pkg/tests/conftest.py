from __future__ import annotations

import pytest

from artifact.equilibrium import solve_equilibrium
from artifact.model import TimeGrid
from helpers import generic_model


@pytest.fixture(scope="session")
def model():
    return generic_model()


@pytest.fixture(scope="session")
def eq100(model):
    return solve_equilibrium(model, TimeGrid(1.0, 100))


@pytest.fixture(scope="session")
def eq200(model):
    return solve_equilibrium(model, TimeGrid(1.0, 200))


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE_LINES
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
