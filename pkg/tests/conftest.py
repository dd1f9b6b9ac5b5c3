"""Shared pytest hooks: collect acceptance verdict lines and print them at the end."""

import pytest

_VERDICTS = []


@pytest.fixture
def verdict():
    """Record one ``criterion N: PASS/FAIL ...`` line and echo it."""
    def record(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}"
        _VERDICTS.append((number, line))
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_VERDICTS, key=lambda x: x[0]):
        terminalreporter.write_line(line)
