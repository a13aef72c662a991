import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_criteria: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion covered by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        n, title = mark.args
        entry = _criteria.setdefault(n, {"title": title, "ok": True, "tests": 0, "details": []})
        entry["tests"] += 1
        entry["ok"] = entry["ok"] and report.passed
        entry["details"] += [v for k, v in report.user_properties if k == "measured"]


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        e = _criteria[n]
        status = "PASS" if e["ok"] else "FAIL"
        terminalreporter.write_line(f"criterion {n}: {status}  {e['title']} ({e['tests']} tests)")
        for detail in e["details"]:
            terminalreporter.write_line(f"    {detail}")
