"""Shared test plumbing: the acceptance-criteria result board.

Acceptance tests record one line per criterion through the ``acceptance``
fixture; the lines are echoed in the terminal summary so the verdicts are
visible even though pytest captures stdout of passing tests.
"""

import pytest

_ACCEPTANCE_LINES: list[str] = []


class AcceptanceBoard:
    def check(self, number: int, name: str, ok: bool, detail: str) -> None:
        verdict = "PASS" if ok else "FAIL"
        line = f"criterion {number} ({name}): {verdict} — {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line


@pytest.fixture(scope="session")
def acceptance():
    return AcceptanceBoard()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in _ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
