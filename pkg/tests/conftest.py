"""Shared test configuration; collects acceptance verdicts and prints them after the run."""
from hypothesis import settings

# fixed example sequence so repeated runs check the same cases
settings.register_profile("repro", derandomize=True)
settings.load_profile("repro")

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
