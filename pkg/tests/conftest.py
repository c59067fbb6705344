"""Shared test plumbing: the acceptance-criteria report section.

Acceptance tests record one verdict line each; the lines are printed as a
dedicated section after the test summary so they survive output capture.
"""

ACCEPTANCE_LINES = []


def record_acceptance(line: str):
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
