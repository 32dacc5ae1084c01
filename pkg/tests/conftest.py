import time

import numpy as np
import pytest

from regime_impact.full_info import solve_full
from regime_impact.model import LogUtility, reference_params
from regime_impact.partial_info import solve_partial

# criterion id -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def record(criterion: str, passed: bool, detail: str) -> None:
    ACCEPTANCE[criterion] = (bool(passed), detail)
    print(f"[{'PASS' if passed else 'FAIL'}] {criterion}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
        ok, detail = ACCEPTANCE[name]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")


@pytest.fixture(scope="session")
def base():
    return reference_params()


@pytest.fixture(scope="session")
def base_log():
    return reference_params(utility=LogUtility())


def _timed(out, key, fn, *args, **kw):
    t0 = time.perf_counter()
    out[key] = fn(*args, **kw)
    out.setdefault("runtime_s", {})[key] = time.perf_counter() - t0


@pytest.fixture(scope="session")
def full_power(base):
    """Paper-parameter full-information solves at the default dt = T/2000, with wall times."""
    out = {}
    _timed(out, "impact", solve_full, base, impact=True)
    _timed(out, "no_impact", solve_full, base, impact=False)
    return out


@pytest.fixture(scope="session")
def partial_power(base):
    """Paper-parameter partial-information solves on the default 4000 x 200 grid, with wall times."""
    out = {}
    _timed(out, "impact", solve_partial, base, impact=True)
    _timed(out, "no_impact", solve_partial, base, impact=False)
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
