import pytest

_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.fixture
def acceptance(request):
    """Dict a criterion test fills with ``detail`` and, for soft checks, ``status``."""
    marker = request.node.get_closest_marker("criterion")
    entry = _RESULTS.setdefault(marker.args[0], {"title": marker.args[1]})
    return entry


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (report.when != "call" and not report.failed):
        return
    entry = _RESULTS.setdefault(marker.args[0], {"title": marker.args[1]})
    if report.failed:
        entry["outcome"] = "FAIL"
    elif report.skipped:
        entry["outcome"] = "SKIP"
    else:
        entry.setdefault("outcome", "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        entry = _RESULTS[number]
        status = entry.get("outcome", "FAIL")
        if status == "PASS" and entry.get("status"):
            status = entry["status"]
        line = f"criterion {number:2d}: {status:4s}  {entry['title']}"
        if entry.get("detail"):
            line += f"  [{entry['detail']}]"
        terminalreporter.write_line(line)
