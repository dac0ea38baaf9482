import pytest

_RESULTS: list[tuple[int, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n): numbered acceptance criterion")


@pytest.fixture
def detail(request):
    """Tests call ``detail("...")`` to attach a one-line summary to their PASS/FAIL line."""
    def set_detail(text: str) -> None:
        request.node.acceptance_detail = text
    return set_detail


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or rep.when != "call":
        return
    status = "PASS" if rep.passed else "FAIL"
    text = getattr(item, "acceptance_detail", "")
    line = f"{status} criterion {marker.args[0]:>2}: {item.name}" + (f" | {text}" if text else "")
    _RESULTS.append((marker.args[0], line))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_RESULTS):
        terminalreporter.write_line(line)
