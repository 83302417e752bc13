import warnings

import pytest

from mrmspec.mrm import IntermittencyWarning

_ACCEPTANCE = []


@pytest.fixture
def acceptance_report():
    """Record one line per acceptance criterion, printed in the terminal summary."""

    def record(name, passed, detail):
        _ACCEPTANCE.append((name, bool(passed), detail))

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")


@pytest.fixture(autouse=True)
def _quiet_intermittency():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", IntermittencyWarning)
        yield
