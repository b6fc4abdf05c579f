import numpy as np
import pytest

from eivsub import Dataset, ErrorCovariance


def random_problem(seed, n=40, p=3, s2=0.2):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, p))
    w = x + rng.normal(scale=np.sqrt(s2), size=(n, p))
    y = x @ np.arange(1, p + 1) + rng.normal(size=n)
    return Dataset(w, y), ErrorCovariance.isotropic(p, s2)


@pytest.fixture
def small_problem():
    return random_problem(0)


ACCEPTANCE_LINES = {}


def record_verdict(number, ok, detail):
    """Store a one-line verdict for an acceptance criterion and return ``ok``."""
    ACCEPTANCE_LINES[number] = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[number])
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
