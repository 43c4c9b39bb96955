import pytest

from memdom.backends import backend_available

_results = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number")
    config.addinivalue_line("markers", "slow: long-running test")


def pytest_runtest_logreport(report):
    crit = getattr(report, "_criterion", None)
    if crit is None:
        return
    if report.when == "call" or report.outcome != "passed":
        # A failure in setup/teardown also fails the criterion.
        prev = _results.get(crit)
        if prev is None or prev == "PASS":
            _results[crit] = "PASS" if report.outcome == "passed" else report.outcome.upper()


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        report._criterion = marker.args


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for (number, title), verdict in sorted(_results.items()):
        status = "PASS" if verdict == "PASS" else "FAIL"
        terminalreporter.write_line("criterion %2d: %s  %s" % (number, status, title))


needs_pageprot = pytest.mark.skipif(not backend_available("pageprot"),
                                    reason="mprotect backend unavailable")
needs_pkey = pytest.mark.skipif(not backend_available("pkey"),
                                reason="protection keys unsupported on this host")


def available_backends():
    return [b for b in ("checked", "pageprot", "pkey") if backend_available(b)]
