import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

_results: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_runtest_logreport(report):
    crit = getattr(report, "criterion", None)
    if crit is None:
        return
    outcome = _results.setdefault(crit, {"ok": True, "notes": []})
    if report.when == "call" or report.outcome != "passed":
        if report.failed:
            outcome["ok"] = False
            outcome["notes"].append(f"{report.nodeid.split('::')[-1]} failed")
        elif hasattr(report, "wasxfail"):
            outcome["notes"].append(f"{report.nodeid.split('::')[-1]} expected failure")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    # attach the criterion number so the log hook can group results
    outcome = yield
    mark = item.get_closest_marker("criterion")
    outcome.get_result().criterion = mark.args[0] if mark else None


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(_results):
        r = _results[crit]
        line = f"criterion {crit}: {'PASS' if r['ok'] else 'FAIL'}"
        if r["notes"]:
            line += " (" + "; ".join(r["notes"]) + ")"
        terminalreporter.write_line(line)
