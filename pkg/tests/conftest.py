import numpy as np
import pytest

from rewardrank.calibration import load_constants


@pytest.fixture(scope="session")
def constants():
    return load_constants()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def uniform_w(n):
    return np.full((n, n), 1.0 / n) - np.eye(n)


def block_uniform_w(sizes):
    n = sum(sizes)
    p = np.zeros((n, n))
    start = 0
    for k in sizes:
        p[start:start + k, start:start + k] = 1.0 / k
        start += k
    return p - np.eye(n)


def pytest_terminal_summary(terminalreporter):
    import re
    import sys

    mod = sys.modules.get("test_acceptance")
    verdicts = dict(getattr(mod, "VERDICTS", {}))
    for rep in terminalreporter.stats.get("failed", []):
        m = re.search(r"test_criterion_(\d+)", rep.nodeid)
        if m and int(m.group(1)) not in verdicts:
            verdicts[int(m.group(1))] = f"FAIL criterion {int(m.group(1)):>2}: error before verdict"
    if verdicts:
        terminalreporter.section("acceptance criteria")
        for k in sorted(verdicts):
            terminalreporter.write_line(verdicts[k])
