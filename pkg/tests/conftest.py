import numpy as np
import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


@pytest.fixture
def record_criterion():
    def record(number, passed, detail):
        ACCEPTANCE_LINES.append((number, passed, detail))
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] AC{number:>2}: {detail}")
