import pytest

# filled by tests/test_acceptance.py: criterion number -> summary line
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture
def record_criterion():
    def record(number, title, ok, detail):
        line = f"criterion {number} {'PASS' if ok else 'FAIL'} {title}: {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return ok

    return record
