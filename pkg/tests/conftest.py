import re
import time

import numpy as np
import pytest

from action_governor.scenarios import acc_scenario, robot_scenario
from action_governor.setcalc import compute_unrecoverable

_CRITERIA = {}


@pytest.fixture(scope="session")
def acc_scn():
    return acc_scenario()


@pytest.fixture(scope="session")
def acc_seq(acc_scn):
    """X_0..X_50 for the car-following instance, with the wall time it took."""
    t0 = time.perf_counter()
    seq = compute_unrecoverable(acc_scn.X0, acc_scn.sys, acc_scn.U, acc_scn.k_max)
    seq.elapsed = time.perf_counter() - t0
    return seq


@pytest.fixture(scope="session")
def acc_oinf(acc_scn):
    return acc_scn.oinf()


@pytest.fixture(scope="session")
def robot_scn():
    return robot_scenario()


@pytest.fixture(scope="session")
def robot_seq(robot_scn):
    t0 = time.perf_counter()
    seq = compute_unrecoverable(robot_scn.X0, robot_scn.sys, robot_scn.U, robot_scn.kprime)
    seq.elapsed = time.perf_counter() - t0
    return seq


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


# acceptance summary: one line per criterion, whatever the outcome

def pytest_runtest_logreport(report):
    m = re.search(r"test_criterion_(\d+)", report.nodeid)
    if not m:
        return
    n = int(m.group(1))
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        detail = dict(report.user_properties).get("detail", "")
        _CRITERIA[n] = (report.outcome, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        outcome, detail = _CRITERIA[n]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {n}: {verdict}  {detail}")
