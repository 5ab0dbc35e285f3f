import sys
from pathlib import Path

# Lets test modules import the shared oracles as a plain module.
sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA: dict[str, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion the test belongs to")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    name = next((v for k, v in report.user_properties if k == "criterion"), None)
    if name is None:
        return
    details = [v for k, v in report.user_properties if k == "detail"]
    _CRITERIA.setdefault(name, []).append((report.nodeid.split("::")[-1], report.outcome, details))


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            item.user_properties.append(("criterion", mark.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for name in sorted(_CRITERIA):
        results = _CRITERIA[name]
        verdict = "PASS" if all(outcome == "passed" for _, outcome, _ in results) else "FAIL"
        tr.write_line(f"{name} {verdict}")
        for test, outcome, details in results:
            extra = f" ({'; '.join(details)})" if details else ""
            tr.write_line(f"    {outcome:7s} {test}{extra}")
