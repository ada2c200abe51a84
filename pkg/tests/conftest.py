from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from sparse_asympt import cinp

settings.register_profile("repo", deadline=None, derandomize=True,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

DATA = Path(__file__).parent / "data"


def load(name: str) -> cinp.Program:
    return cinp.parse((DATA / f"{name}.cinp").read_text())


@pytest.fixture
def program():
    return load


# one line per acceptance criterion, printed after the run
ACCEPTANCE: list = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for line in ACCEPTANCE:
        terminalreporter.write_line(line)
