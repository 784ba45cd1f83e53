import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import pytest  # noqa: E402

from fracsource.spectral import find_eigenvalues  # noqa: E402

_SYSTEMS = {}


def eigensystem(beta, n_modes=40):
    """Session-wide cache; zero finding is the slow part of many tests."""
    key = (float(beta), n_modes)
    if key not in _SYSTEMS:
        _SYSTEMS[key] = find_eigenvalues(beta, n_modes)
    return _SYSTEMS[key]


@pytest.fixture(scope="session")
def systems():
    return eigensystem


_CRITERIA_LINES: dict = {}


def record_criterion(i, line):
    _CRITERIA_LINES[i] = line


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for i in sorted(_CRITERIA_LINES):
            terminalreporter.write_line(_CRITERIA_LINES[i])
