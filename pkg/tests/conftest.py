"""Shared registry for the acceptance suite.

Each acceptance test records one verdict line; the lines are repeated in the
terminal summary so a plain ``pytest`` run shows every criterion at the end.
"""

import pytest

CRITERIA: dict[int, str] = {}


@pytest.fixture
def verdict():
    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"CRITERION {number}: {'PASS' if passed else 'FAIL'} {detail}"
        CRITERIA[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        terminalreporter.write_line(CRITERIA[number])
