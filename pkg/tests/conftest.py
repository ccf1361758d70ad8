"""Shared pytest wiring: collects acceptance verdicts and prints them as a
terminal section, so the one-line-per-criterion report survives output
capture in any mode."""

import pytest

_acceptance_lines: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Append-only list of `criterion NN PASS/FAIL ...` lines."""
    return _acceptance_lines


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)
