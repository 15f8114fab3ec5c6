import pytest

_LINES = []


@pytest.fixture
def criterion():
    """Record one PASS/FAIL line; the lines are repeated in the terminal summary."""

    def report(name, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'} {name}: {detail}"
        print(line)
        _LINES.append(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
