"""Control forces, their per-position feasible ranges and intersection volume cost."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corridor import ConfigurationError, CorridorConfig, PositionKind

HOLDING, SIGNAL, SPEED = 0, 1, 2
STRATEGIES = ("holding", "signal", "speed")
# Which action component each position kind owns.
KIND_COMPONENT = {PositionKind.STATION: HOLDING,
                  PositionKind.INTERSECTION: SIGNAL,
                  PositionKind.ROAD: SPEED}


@dataclass(frozen=True)
class ControlAction:
    holding: float = 0.0
    signal: float = 0.0
    speed: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.holding, self.signal, self.speed])


@dataclass(frozen=True)
class ActionBounds:
    lo: float
    hi: float

    def __post_init__(self):
        if self.lo > self.hi:
            raise ConfigurationError(f"action bounds lo={self.lo} > hi={self.hi}")


@dataclass(frozen=True)
class SpeedEnvelope:
    v_min: float
    v_max: float
    travel_time: float
    distance: float

    def __post_init__(self):
        v_nom = self.distance / self.travel_time if self.travel_time > 0 else float("nan")
        if not (0 < self.v_min <= v_nom <= self.v_max):
            raise ConfigurationError(
                f"speed envelope violates 0 < v_min <= M/r <= v_max "
                f"(v_min={self.v_min}, M/r={v_nom}, v_max={self.v_max})")

    @property
    def max_saving(self) -> float:
        """Seconds gained by cruising at v_max instead of the nominal speed."""
        return self.travel_time - self.distance / self.v_max

    @property
    def max_relaxation(self) -> float:
        return self.distance / self.v_min - self.travel_time


@dataclass(frozen=True)
class IntersectionVolumeProfile:
    ratios: tuple[float, ...]  # V/C per phase
    major: int = 0

    def __post_init__(self):
        if not self.ratios:
            raise ConfigurationError("volume profile needs at least one phase")
        if not 0 <= self.major < len(self.ratios):
            raise ConfigurationError(f"major phase {self.major} out of range")
        if any(r <= 0 for r in self.ratios):
            raise ConfigurationError("V/C ratios must be positive")

    @property
    def cost(self) -> float:
        major = self.ratios[self.major]
        if major == 0:
            raise ConfigurationError("major-movement V/C ratio is zero")
        return sum(self.ratios) / major


def bounds_for_position(kind: PositionKind, envelope: SpeedEnvelope | None = None, *,
                        hold_max: float = 20.0, signal_max: float = 20.0) -> ActionBounds:
    if (kind == PositionKind.ROAD) != (envelope is not None):
        raise ConfigurationError("a speed envelope is required for road segments and only for them")
    if kind == PositionKind.STATION:
        return ActionBounds(0.0, hold_max)
    if kind == PositionKind.INTERSECTION:
        return ActionBounds(-signal_max, signal_max)
    return ActionBounds(-envelope.max_saving, envelope.max_relaxation)


def clamp_action(raw: ControlAction, kind: PositionKind, bounds: ActionBounds) -> ControlAction:
    """Clip the component owned by ``kind`` into ``bounds`` and zero the others."""
    comp = KIND_COMPONENT[kind]
    value = float(np.clip(raw.as_array()[comp], bounds.lo, bounds.hi))
    out = [0.0, 0.0, 0.0]
    out[comp] = value
    return ControlAction(*out)


def total_control_force(action: ControlAction) -> float:
    return action.holding + action.signal + action.speed


def volume_cost(profiles: Sequence[IntersectionVolumeProfile]) -> float:
    """Block cost q: sum of per-intersection costs, 0 for a block without signals."""
    return float(sum(p.cost for p in profiles))


def bounds_table(config: CorridorConfig, *, hold_max: float = 20.0, signal_max: float = 20.0,
                 strategies: Sequence[str] = STRATEGIES) -> tuple[np.ndarray, np.ndarray]:
    """Per-position ``(lo, hi)`` arrays of shape (loop_length, 3).

    Components a position does not own, and disabled strategies, get the
    degenerate range [0, 0], so clipping with these arrays enforces both
    feasibility and location exclusivity.
    """
    unknown = set(strategies) - set(STRATEGIES)
    if unknown or not strategies:
        raise ConfigurationError(f"strategy mask must be a nonempty subset of {STRATEGIES}, got {strategies}")
    lo = np.zeros((config.loop_length, 3))
    hi = np.zeros((config.loop_length, 3))
    for j, pos in enumerate(config.positions):
        env = None
        if pos.kind == PositionKind.ROAD:
            p = pos.profile
            if pos.v_min is None or pos.v_max is None:
                raise ConfigurationError(f"positions[{j}]: road segment lacks a speed envelope")
            env = SpeedEnvelope(pos.v_min, pos.v_max, p.avg_travel_time, p.distance_to_next)
        b = bounds_for_position(pos.kind, env, hold_max=hold_max, signal_max=signal_max)
        comp = KIND_COMPONENT[pos.kind]
        if STRATEGIES[comp] in strategies:
            lo[j, comp], hi[j, comp] = b.lo, b.hi
    return lo, hi
