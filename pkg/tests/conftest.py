import numpy as np
import pytest

from sggru._kernels import available_backends

_ACCEPTANCE = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion reported in the summary")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    marker = getattr(report, "criterion", None)
    if marker:
        _ACCEPTANCE.append((marker, report.outcome))


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        rep.criterion = mark.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    results = {}
    for name, outcome in _ACCEPTANCE:
        results[name] = results.get(name, True) and outcome == "passed"
    terminalreporter.section("acceptance criteria")
    for name, ok in results.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}")


@pytest.fixture(params=sorted(available_backends()))
def kernels(request):
    """Every importable kernel backend module."""
    return available_backends()[request.param]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
