import pytest

_ACCEPTANCE_LINES = []


@pytest.fixture
def criterion(request):
    """Record one pass/fail line for an acceptance criterion.

    Call ``criterion(number, title, passed, detail)`` once per test; a test
    that errors before recording is reported as failed.
    """
    recorded = []

    def record(number, title, passed, detail=""):
        line = f"criterion {number} {'PASS' if passed else 'FAIL'}: {title}"
        if detail:
            line += f" [{detail}]"
        recorded.append(line)
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    yield record
    if not recorded:
        _ACCEPTANCE_LINES.append(f"criterion ? FAIL: {request.node.name} raised before reporting")


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
