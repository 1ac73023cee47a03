"""Collects acceptance outcomes and prints one pass/fail line per criterion."""
import re

_CRITERIA: dict[tuple[int, str], tuple[str, float, str]] = {}


def pytest_runtest_logreport(report):
    m = re.search(r"test_criterion_(\d+)", report.nodeid)
    if not m:
        return
    n = (int(m.group(1)), report.nodeid.partition("[")[2].rstrip("]"))
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        detail = ""
        if report.outcome == "skipped" and isinstance(report.longrepr, tuple):
            detail = report.longrepr[2]
        _CRITERIA[n] = (status, report.duration, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_CRITERIA):
        status, duration, detail = _CRITERIA[key]
        label = f"{key[0]:>2}" + (f" [{key[1]}]" if key[1] else "")
        line = f"criterion {label}: {status}  ({duration:.1f} s)"
        if detail:
            line += f"  {detail}"
        terminalreporter.write_line(line)
