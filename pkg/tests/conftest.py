import numpy as np
import pytest

from rwmvc.numerics import configure_threads, make_rng

configure_threads(1)


@pytest.fixture
def rng():
    return make_rng(1234)


def finite_diff(f, X, h=1e-5):
    """Central differences of scalar ``f`` at every entry of ``X``."""
    X = np.array(X, dtype=np.float64)
    G = np.zeros_like(X)
    for i in np.ndindex(X.shape):
        xp = X.copy()
        xm = X.copy()
        xp[i] += h
        xm[i] -= h
        G[i] = (f(xp) - f(xm)) / (2 * h)
    return G


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-3))


ACCEPTANCE_LINES = []


def record_criterion(number, title, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} -- {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
