import pytest

_LINES = []


@pytest.fixture
def criterion_line():
    """Record one PASS/FAIL line; the lines are echoed again in the terminal summary."""
    def record(number, title, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title}"
        if detail:
            line += f"  ({detail})"
        print(line)
        _LINES.append((number, line))
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_LINES):
            terminalreporter.write_line(line)
