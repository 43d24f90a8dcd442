import pytest

_LINES = {}


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion."""

    def record(criterion, passed, detail):
        line = f"criterion {criterion:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        _LINES[criterion] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_LINES, key=lambda k: (int("".join(c for c in str(k) if c.isdigit()) or 0), str(k))):
        terminalreporter.write_line(_LINES[key])
