import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from buscorridor.control import ControlAction
from buscorridor.corridor import ConfigurationError
from buscorridor.observation import (CostCoefficients, FusedObservation, downstream_weights, fuse_state,
                                     fused_headway_deviation, reward, running_cost, running_cost_array)


def _exact_weights(k):
    return [Fraction(1, 2 ** m) for m in range(1, k)] + [Fraction(1, 2 ** (k - 1))]


@pytest.mark.parametrize("k", range(1, 11))
def test_weights_sum_to_one_and_decrease(k):
    w = downstream_weights(k)
    assert w.sum() == 1.0
    assert np.all(np.diff(w) <= 0)
    assert [Fraction(x) for x in w] == _exact_weights(k)


def test_weights_k5():
    assert list(downstream_weights(5)) == [0.5, 0.25, 0.125, 0.0625, 0.0625]
    with pytest.raises(ValueError):
        downstream_weights(0)


def test_cost_example():
    obs = FusedObservation(10.0, 5.0, 0.0)
    c = running_cost(obs, ControlAction(2.0, 3.0, 0.0), 1.0, CostCoefficients())
    assert c == pytest.approx(1.38, abs=1e-12)
    assert reward(c) == pytest.approx(0.2515785530597565, abs=1e-4)


def test_reward_values():
    assert reward(0.0) == 1.0
    assert abs(reward(math.log(2)) - 0.5) <= 1e-12
    with pytest.raises(ValueError):
        reward(-1.0)


def test_signal_penalty_monotone_in_q():
    obs = FusedObservation(3.0, -2.0, 10.0)
    for uk in np.linspace(-20, 20, 41):
        if uk == 0:
            continue
        costs = [running_cost(obs, ControlAction(0, uk, 0), q, CostCoefficients()) for q in np.linspace(0, 100, 51)]
        assert np.all(np.diff(costs) > 0)


def test_cost_array_matches_scalar(rng):
    e, d = rng.normal(0, 30, 20), rng.normal(0, 30, 20)
    u = rng.normal(0, 5, (20, 3))
    q = rng.uniform(0, 50, 20)
    c = running_cost_array(e, d, u, q, CostCoefficients())
    for i in range(20):
        ref = running_cost(FusedObservation(e[i], d[i], 0), ControlAction(*u[i]), q[i], CostCoefficients())
        assert c[i] == pytest.approx(ref, rel=1e-12)


def test_equilibrium_state():
    # every downstream bus exactly k planned headways ahead
    obs = fuse_state(1000.0, 1000.0, [700.0, 400.0, 100.0], planned_headway=300.0, demand_rate=0.05, k=5)
    assert obs == FusedObservation(0.0, 0.0, 15.0)


def test_dummy_buses_use_schedule_grid():
    obs = fuse_state(1010.0, 1000.0, [], planned_headway=300.0, demand_rate=0.1, k=3)
    # dummies at 700, 400, 100 -> every term deviates by +10
    assert obs.weighted_headway_dev == pytest.approx(10.0)
    assert obs.dwell_load == pytest.approx(31.0)


def test_invalid_coefficients():
    with pytest.raises(ConfigurationError):
        CostCoefficients(schedule=0.0)
    with pytest.raises(ConfigurationError):
        running_cost(FusedObservation(0, 0, 0), ControlAction(), -1.0, CostCoefficients())


@settings(max_examples=100, deadline=None)
@given(st.floats(-500, 500), st.lists(st.floats(-50, 50), min_size=1, max_size=8))
def test_fused_deviation_is_weighted_average(arrival, offsets):
    k = len(offsets)
    H = 300.0
    ahead = [arrival - m * H - off for m, off in zip(range(1, k + 1), offsets)]
    got = fused_headway_deviation(arrival, ahead, H, downstream_weights(k))
    assert got == pytest.approx(float(np.dot(offsets, downstream_weights(k))), abs=1e-9)
    assert min(offsets) - 1e-9 <= got <= max(offsets) + 1e-9
