from __future__ import annotations

from contextlib import contextmanager

import numpy as np
import pytest

from factorsvar.dgp import DgpConfig, simulate_system
from factorsvar.model import Dataset, HorseshoeState, ModelDims, ParameterDraw

ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def criterion(request, capsys):
    """Record one pass/fail line per acceptance criterion.

    Usage: ``with criterion(3, "conjugacy oracles") as note: ...`` where
    ``note(text)`` appends raw numbers to the line.
    """
    @contextmanager
    def run(number: int, title: str):
        details: list[str] = []
        status = "FAIL"
        try:
            yield details.append
            status = "PASS"
        finally:
            line = f"[{status}] criterion {number}: {title}" + (f" ({'; '.join(details)})" if details else "")
            request.config.stash[ACCEPTANCE].append(line)
            with capsys.disabled():
                print(f"\n{line}")

    return run


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def benchmark_system():
    """One synthetic benchmark-sized system: n=10, m=5, T=148, 15 impact + 6 shock signs."""
    return simulate_system(DgpConfig(), 15, 6, np.random.default_rng(11))


@pytest.fixture(scope="session")
def small_fixture():
    """n=2, r=1, p=1, T=51 (50 estimation periods) with a fixed state."""
    g = np.random.default_rng(5)
    n, r, p, T = 2, 1, 1, 51
    dims = ModelDims(n, p, r, T)
    L = np.array([[0.8], [-0.5]])
    F = g.standard_normal((T - p, r))
    y = np.zeros((T, n))
    y[0] = g.standard_normal(n)
    B1 = np.array([[0.5, 0.1], [0.0, 0.3]])
    for t in range(1, T):
        y[t] = 0.2 + B1 @ y[t - 1] + L @ F[t - 1] + 0.3 * g.standard_normal(n)
    data = Dataset(y, ("a", "b"))
    beta = np.column_stack([np.full(n, 0.2), B1])
    state = ParameterDraw(beta, L.copy(), np.array([0.09, 0.09]), F.copy(), HorseshoeState.ones(n, dims.k))
    return dims, data, state
