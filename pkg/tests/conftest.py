import pytest

# one line per acceptance criterion, filled by test_acceptance.py
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture
def record_acceptance():
    def record(number, passed, seconds, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} ({seconds:.2f} s) {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
    return record
