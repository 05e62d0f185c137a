import pytest

_ACCEPTANCE = {}


@pytest.fixture(scope="session")
def acceptance_log():
    """Criterion id -> (passed, detail); echoed in the terminal summary."""
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE, key=lambda k: int(k[1:])):
        ok, detail = _ACCEPTANCE[key]
        terminalreporter.write_line(f"{key} {'PASS' if ok else 'FAIL'}: {detail}")
