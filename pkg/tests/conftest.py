import numpy as np
import pytest

from pairknn.covertree import essential_levels
from pairknn.knn import knn_paired
from pairknn.traversal import expansion_bound

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    crit = getattr(report, "_criterion", None)
    if crit is None:
        return
    prev = _criteria.get(crit)
    ok = report.outcome == "passed"
    _criteria[crit] = ok if prev is None else (prev and ok)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        report._criterion = (marker.args[0], marker.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for (num, title), ok in sorted(_criteria.items()):
        terminalreporter.write_line(f"criterion {num:>2} {'PASS' if ok else 'FAIL'}  {title}")


# every paired run in the suite goes through here so the counter bounds are
# asserted on all of them
def checked_knn(treeQ, treeR, k, **kw):
    result, stats = knn_paired(treeQ, treeR, k, **kw)
    assert_counter_bounds(treeQ, treeR, stats)
    return result, stats


def assert_counter_bounds(treeQ, treeR, stats):
    assert stats.reference_expansions <= expansion_bound(treeQ, treeR)
    assert stats.query_expansions <= 2 * treeQ.n
    assert sum(len(essential_levels(treeR, p)) for p in range(treeR.n)) <= 2 * treeR.n
    assert sum(len(essential_levels(treeQ, p)) for p in range(treeQ.n)) <= 2 * treeQ.n


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
