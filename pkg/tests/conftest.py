import pytest

_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one summary line per acceptance criterion."""
    def add(name: str, passed: bool, detail: str):
        _LINES.append(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
        return passed
    return add


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
