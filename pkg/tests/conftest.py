import pytest

_criteria = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        detail = getattr(item, "criterion_detail", "")
        _criteria.append((marker.args[0], report.outcome == "passed", report.duration, detail))


@pytest.fixture
def detail(request):
    """Attach a short measured-value string to the acceptance summary line."""

    def set_detail(text):
        request.node.criterion_detail = text

    return set_detail


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, duration, detail in _criteria:
        status = "PASS" if passed else "FAIL"
        extra = f"  [{detail}]" if detail else ""
        terminalreporter.write_line(f"{status}  {name} ({duration:.1f}s){extra}")
