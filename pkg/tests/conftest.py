import time

import pytest

from u2fi import kernels, sidechannel

SUITE_BUDGET_S = 60.0
_session_start = time.monotonic()
_acceptance: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n, title): end-to-end acceptance criterion n")
    config.addinivalue_line("markers", "suite_budget: runs last and checks total wall-clock time")


def pytest_collection_modifyitems(session, config, items):
    # the wall-clock budget check has to observe everything else first
    last = [it for it in items if it.get_closest_marker("suite_budget")]
    for it in last:
        items.remove(it)
    items.extend(last)


def pytest_runtest_logreport(report):
    if report.when != "call" and report.passed:
        return
    mark = dict(report.user_properties).get("acceptance")
    if mark is None:
        return
    n, title = mark
    verdict = "PASS" if report.passed else "FAIL"
    # a parametrized criterion passes only if every case passes
    if _acceptance.get(n, (title, "PASS"))[1] == "FAIL":
        verdict = "FAIL"
    _acceptance[n] = (title, verdict)


@pytest.hookimpl(tryfirst=True)
def pytest_runtest_setup(item):
    m = item.get_closest_marker("acceptance")
    if m is not None:
        item.user_properties.append(("acceptance", (m.args[0], m.args[1])))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_acceptance):
        title, verdict = _acceptance[n]
        terminalreporter.write_line(f"criterion {n:>2}: {verdict}  {title}")


def suite_elapsed() -> float:
    return time.monotonic() - _session_start


@pytest.fixture(params=["numpy", "numba"])
def backend(request, monkeypatch):
    """Run codec tests against each kernel implementation in turn."""
    if request.param == "numba" and kernels.scan_numba is None:
        pytest.skip("numba not installed")
    scan = getattr(kernels, f"scan_{request.param}")
    crc = getattr(kernels, f"crc16_{request.param}")
    monkeypatch.setattr(kernels, "scan", scan)
    monkeypatch.setattr(kernels, "crc16", crc)
    return request.param


@pytest.fixture
def codec(backend):
    return sidechannel
