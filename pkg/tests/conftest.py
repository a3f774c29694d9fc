"""Shared fixtures plus the end-of-run acceptance report.

The acceptance tests append one "[PASS]/[FAIL] criterion N: ..." line each;
those lines are echoed in a dedicated terminal section after the run so the
verdict per criterion is visible even when stdout capture is on.
"""

import numpy as np
import pytest

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def criteria_report():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


@pytest.fixture()
def rng():
    return np.random.default_rng(7)
