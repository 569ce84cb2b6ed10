"""Collects one PASS/FAIL line per acceptance criterion and prints them after the run."""

import pytest

_RESULTS = {}
_DETAILS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number exercised by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    n = mark.args[0]
    ok = rep.passed and not rep.skipped
    _RESULTS[n] = _RESULTS.get(n, True) and ok
    for key, val in item.user_properties:
        if key == "detail":
            _DETAILS.setdefault(n, []).append(val)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        detail = "; ".join(dict.fromkeys(_DETAILS.get(n, [])))
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if _RESULTS[n] else 'FAIL'}  {detail}".rstrip())
