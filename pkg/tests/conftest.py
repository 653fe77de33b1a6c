import pytest

RESULTS: list[str] = []


@pytest.fixture
def report():
    """Record one acceptance line; returns ``passed`` so tests can assert on it."""

    def _report(label, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'}  {label}: {detail}"
        RESULTS.append(line)
        print(line)
        return passed

    return _report


def pytest_terminal_summary(terminalreporter):
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
