import pytest

_RESULTS = {}


@pytest.fixture
def verdict():
    """Record one acceptance outcome: verdict(n, ok, detail)."""

    def record(n, ok, detail=""):
        _RESULTS[n] = (bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        ok, detail = _RESULTS[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
