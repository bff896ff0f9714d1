import pytest

_CRITERIA = []


@pytest.fixture
def record_criterion():
    """Record one acceptance line; printed in the terminal summary."""

    def record(number, name, passed, detail):
        line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {name}: {detail}"
        _CRITERIA.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_CRITERIA):
            terminalreporter.write_line(line)
