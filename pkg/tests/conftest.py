import pytest

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when not in ("setup", "call"):
        return
    number, title = marker.args
    entry = _criteria.setdefault(number, {"title": title, "ok": True, "details": []})
    if report.failed:
        entry["ok"] = False
    if report.when == "call":
        entry["details"].extend(getattr(item, "criterion_details", []))


@pytest.fixture
def detail(request):
    """Attach a measured value to the criterion's summary line."""
    request.node.criterion_details = []
    return request.node.criterion_details.append


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        status = "PASS" if entry["ok"] else "FAIL"
        line = f"{status}  [{number}] {entry['title']}"
        if entry["details"]:
            line += "  (" + "; ".join(entry["details"]) + ")"
        terminalreporter.write_line(line)
