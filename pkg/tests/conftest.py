import re

import numpy as np
import pytest

from dqic.model import AnnealingSchedule, BathSpec, build_kernel_table, build_time_grid

_CRITERIA = {}
_INVARIANTS = {"passed": 0, "failed": []}


def pytest_runtest_logreport(report):
    m = re.search(r"test_acceptance\.py::test_criterion_(\d+)", report.nodeid)
    if m and (report.when == "call" or report.outcome != "passed"):
        n = int(m.group(1))
        # parametrized criteria pass only if every case passes
        if _CRITERIA.get(n, "passed") == "passed":
            _CRITERIA[n] = report.outcome
    if "invariant" in report.keywords and report.when == "call":
        if report.passed:
            _INVARIANTS["passed"] += 1
        else:
            _INVARIANTS["failed"].append(report.nodeid)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        outcome = _CRITERIA[n]
        if n == 9 and _INVARIANTS["failed"]:
            outcome = "failed"
        tr.write_line(f"criterion {n}: {'PASS' if outcome == 'passed' else outcome.upper()}")
    tr.write_line(f"invariant tests passed: {_INVARIANTS['passed']}, failed: {len(_INVARIANTS['failed'])}")
    for nodeid in _INVARIANTS["failed"]:
        tr.write_line(f"  failed invariant: {nodeid}")


@pytest.fixture(scope="session")
def bath():
    return BathSpec(0.18, 5.0, 1.0)


@pytest.fixture(scope="session")
def sched():
    return AnnealingSchedule(1.0)


@pytest.fixture(scope="session")
def table_m6(bath):
    return build_kernel_table(build_time_grid(0.3, 0.05, 10.0), bath)


@pytest.fixture
def rng():
    return np.random.default_rng(7)
