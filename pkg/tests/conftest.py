import pytest

_VERDICTS = {}


@pytest.fixture
def verdict(request):
    """Record one acceptance line: ``verdict(key, ok, detail)``."""

    def record(key, ok, detail):
        _VERDICTS[key] = (bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_VERDICTS, key=lambda k: (int(k.rstrip("ab")), k)):
        ok, detail = _VERDICTS[key]
        terminalreporter.write_line(f"criterion {key:<3} {'PASS' if ok else 'FAIL'}  {detail}")
