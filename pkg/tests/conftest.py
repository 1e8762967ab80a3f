import pytest

_ACCEPTANCE_LINES: list = []


@pytest.fixture(scope="session")
def verdict():
    """Record one pass/fail line for an acceptance criterion, then assert it.

    ``soft=True`` turns a failure into a WARN line instead of a test failure.
    """

    def record(name: str, ok: bool, detail: str, soft: bool = False) -> bool:
        status = "PASS" if ok else ("WARN" if soft else "FAIL")
        line = f"{status}  {name}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        if not soft:
            assert ok, line
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
