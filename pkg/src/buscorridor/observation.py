"""Fused agent state over downstream buses and the exponential-quadratic reward."""
from __future__ import annotations

import math
from dataclasses import dataclass, astuple
from typing import Sequence

import numpy as np

from .control import ControlAction
from .corridor import ConfigurationError


@dataclass(frozen=True)
class FusedObservation:
    schedule_dev: float
    weighted_headway_dev: float
    dwell_load: float

    def as_array(self) -> np.ndarray:
        return np.array(astuple(self))


@dataclass(frozen=True)
class CostCoefficients:
    schedule: float = 0.01
    headway: float = 0.01
    holding: float = 0.01
    signal: float = 0.01
    speed: float = 0.01

    def __post_init__(self):
        for name, v in zip(("schedule", "headway", "holding", "signal", "speed"), astuple(self)):
            if not v > 0:
                raise ConfigurationError(f"cost coefficient {name} must be > 0, got {v}")


def downstream_weights(k: int) -> np.ndarray:
    """Weights 1/2, 1/4, ..., with the last bus taking the remainder so they sum to 1."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    w = np.array([0.5 ** m for m in range(1, k + 1)])
    w[-1] = 0.5 ** (k - 1)
    return w


def fused_headway_deviation(arrival, downstream, planned_headway: float, weights: np.ndarray):
    """Weighted sum of k-bus headway deviations.

    ``downstream[..., m-1]`` is the arrival of the m-th bus ahead (dummy
    buses already substituted). Works on scalars or leading batch axes.
    """
    arrival = np.asarray(arrival, dtype=float)
    downstream = np.asarray(downstream, dtype=float)
    k = len(weights)
    m = np.arange(1, k + 1)
    dev = (arrival[..., None] - downstream) - m * planned_headway
    return dev @ weights


def fuse_state(arrival: float, scheduled: float, downstream: Sequence[float | None], *,
               planned_headway: float, demand_rate: float, k: int = 5) -> FusedObservation:
    """State of one bus from its own timing and up to ``k`` buses ahead.

    ``downstream`` is ordered nearest first; missing entries (``None`` or
    absent) become dummy buses exactly on the subject's schedule grid, i.e.
    arriving ``m * planned_headway`` before the subject's scheduled time.
    """
    if len(downstream) > k:
        raise ValueError(f"{len(downstream)} downstream buses given for k={k}")
    ahead = []
    for m in range(1, k + 1):
        a = downstream[m - 1] if m <= len(downstream) else None
        ahead.append(scheduled - m * planned_headway if a is None else a)
    d_fused = float(fused_headway_deviation(arrival, ahead, planned_headway, downstream_weights(k)))
    headway = arrival - ahead[0]
    return FusedObservation(arrival - scheduled, d_fused, demand_rate * headway)


def running_cost(obs: FusedObservation, action: ControlAction, q: float, coeffs: CostCoefficients) -> float:
    if q < 0:
        raise ConfigurationError(f"volume cost must be >= 0, got {q}")
    c = coeffs
    return (c.schedule * obs.schedule_dev ** 2
            + c.headway * obs.weighted_headway_dev ** 2
            + c.holding * action.holding ** 2
            + c.signal * q * action.signal ** 2
            + c.speed * action.speed ** 2)


def running_cost_array(e, d_fused, u, q, coeffs: CostCoefficients):
    """Vectorised cost; ``u`` has a trailing axis (holding, signal, speed)."""
    u = np.asarray(u, dtype=float)
    c = coeffs
    return (c.schedule * np.square(e) + c.headway * np.square(d_fused)
            + c.holding * u[..., 0] ** 2 + c.signal * q * u[..., 1] ** 2 + c.speed * u[..., 2] ** 2)


def reward(cost: float) -> float:
    if cost < 0:
        raise ValueError(f"cost must be >= 0, got {cost}")
    return math.exp(-cost)
