import numpy as np
import pytest

from buscorridor.corridor import build_corridor

# Average travel times (s) and demand rates for the 20-station loop.
TRAVEL = [257, 253, 257, 259, 246, 247, 260, 256, 240, 252, 246, 240, 256, 250, 242, 251, 242, 250, 248, 257]
DEMAND = [.08, .05, .03, .09, .07, .11, .06, .11, .05, .10, .05, .11, .04, .12, .07, .08, .05, .11, .08, .04]


@pytest.fixture
def corridor():
    return build_corridor(TRAVEL, DEMAND, planned_headway=300.0, n_buses=19, v_min=5.5, v_max=6.6)


@pytest.fixture
def small_corridor():
    return build_corridor([250.0, 240.0, 260.0], [0.05, 0.1, 0.08], planned_headway=300.0, n_buses=4,
                          v_min=5.5, v_max=6.6, volume_cost=[1.0, 5.0, 20.0])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def record_criterion(number, passed, detail):
    ACCEPTANCE[number] = (bool(passed), detail)
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
