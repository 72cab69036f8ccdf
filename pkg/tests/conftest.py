from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_criteria: dict[int, tuple[str, str]] = {}


def pytest_configure(config) -> None:
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_runtest_logreport(report) -> None:
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    number = getattr(report, "criterion_number", None)
    if number is None:
        return
    status = "PASS" if report.outcome == "passed" else "FAIL"
    prev = _criteria.get(number)
    if prev is None or prev[0] == "PASS":
        _criteria[number] = (status, report.criterion_title)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        report.criterion_number = marker.args[0]
        report.criterion_title = marker.args[1]


def pytest_terminal_summary(terminalreporter) -> None:
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        status, title = _criteria[number]
        terminalreporter.write_line(f"AC{number:<2} {status}  {title}")
