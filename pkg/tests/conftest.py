import pytest

ACCEPTANCE = {}


def record(number, passed, detail):
    """Book one acceptance line; printed in the terminal summary."""
    ACCEPTANCE[number] = (bool(passed), detail)
    line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
    print(line)
    return line


@pytest.fixture
def acceptance():
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
