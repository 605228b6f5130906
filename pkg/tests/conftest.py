import pytest

_ACCEPTANCE = []


@pytest.fixture
def report():
    """Record one pass/fail line for an acceptance criterion."""

    def record(number, title, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {title}: {detail}"
        _ACCEPTANCE.append((number, line))
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for _, line in sorted(_ACCEPTANCE):
        terminalreporter.write_line(line)
