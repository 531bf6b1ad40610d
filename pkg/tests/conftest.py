"""Acceptance reporting: one PASS/FAIL line per criterion at the end of the run."""
import pytest

_RESULTS: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion check")


@pytest.fixture
def detail(request):
    """Append a human-readable measurement to the criterion's summary line."""
    def add(text: str):
        request.node.user_properties.append(("detail", text))
        print(text)
    return add


def pytest_runtest_logreport(report):
    marker = getattr(report, "_criterion", None)
    if marker is None:
        return
    number, title = marker
    entry = _RESULTS.setdefault(number, {"title": title, "ok": True, "details": []})
    if report.failed or (report.when == "call" and report.skipped):
        entry["ok"] = False
    if report.when == "call":
        entry["details"] += [v for k, v in report.user_properties if k == "detail"]


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    m = item.get_closest_marker("criterion")
    if m is not None:
        outcome.get_result()._criterion = tuple(m.args)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        r = _RESULTS[number]
        status = "PASS" if r["ok"] else "FAIL"
        line = f"criterion {number} {status}: {r['title']}"
        if r["details"]:
            line += " | " + "; ".join(r["details"])
        terminalreporter.write_line(line)
