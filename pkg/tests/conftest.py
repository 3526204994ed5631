import pytest

_LINES: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion; printed at the end of the run."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _LINES[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_LINES):
        terminalreporter.write_line(_LINES[number])
