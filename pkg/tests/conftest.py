import pytest

# acceptance lines collected during the session, printed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)


@pytest.fixture
def report():
    def emit(number, ok, text):
        line = f"[{'PASS' if ok else 'FAIL'}] {number}: {text}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return emit
