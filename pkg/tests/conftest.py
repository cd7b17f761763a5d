import numpy as np
import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Record one acceptance line: report(n, passed, detail)."""
    def _report(n, passed, detail):
        ACCEPTANCE_LINES.append(f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
    return _report


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
