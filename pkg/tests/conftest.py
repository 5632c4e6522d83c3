import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

CRITERIA = {}
_BY_NODE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_runtest_logreport(report):
    marker = _BY_NODE.get(report.nodeid)
    if marker is None:
        return
    number, title = marker
    entry = CRITERIA.setdefault(number, {"title": title, "passed": True, "seen": False})
    if report.when == "call":
        entry["seen"] = True
    if report.failed or (report.when == "call" and report.skipped):
        entry["passed"] = False


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            _BY_NODE[item.nodeid] = tuple(m.args)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        e = CRITERIA[number]
        ok = e["passed"] and e["seen"]
        terminalreporter.write_line("%s  criterion %d: %s" % ("PASS" if ok else "FAIL", number, e["title"]))
