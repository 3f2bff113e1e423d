import pytest


VERDICTS = []


@pytest.fixture
def verdict(request):
    """Print one pass/fail line for an acceptance criterion and fail the test on a miss."""
    def record(ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] {request.node.name}: {detail}"
        print(line)
        VERDICTS.append(line)
        assert ok, detail
    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
