"""Collects one summary line per acceptance criterion and prints them at the end of the run."""

from __future__ import annotations

import pytest

_LINES: dict[int, str] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number n")


@pytest.fixture
def detail():
    """Tests append free-text details that go on their criterion's summary line."""
    return []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call":
        return
    n = marker.args[0]
    notes = "; ".join(item.funcargs.get("detail") or [])
    if report.passed:
        line = f"criterion {n}: PASS" + (f": {notes}" if notes else "")
    else:
        reason = str(call.excinfo.value).splitlines()[0] if call.excinfo else "failed"
        line = f"criterion {n}: FAIL: {reason}" + (f" ({notes})" if notes else "")
    _LINES[n] = line
    print(f"\n{line}")


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_LINES):
            terminalreporter.write_line(_LINES[n])
