"""Static corridor description, timetable construction and deviation algebra.

A loop is a sequence of positions. Each inter-station block is laid out as
``Station -> RoadSegment -> Intersection * n`` and the block's average travel
time and distance live on its road segment.
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class ConfigurationError(ValueError):
    """Raised for an invalid corridor, control or scenario configuration."""


class PositionKind(enum.IntEnum):
    STATION = 0
    ROAD = 1
    INTERSECTION = 2


@dataclass(frozen=True)
class StationProfile:
    """Per-position attributes.

    ``avg_travel_time`` is the time to the next position, ``demand_rate`` the
    dwell multiplier of the headway and ``slack`` the schedule buffer. Only
    road segments carry travel time and distance; only stations carry demand
    and slack.
    """

    index: int
    avg_travel_time: float = 0.0
    demand_rate: float = 0.0
    slack: float = 0.0
    distance_to_next: float = 0.0


@dataclass(frozen=True)
class Position:
    kind: PositionKind
    profile: StationProfile
    block: int  # zero-based station block this position belongs to
    v_min: float | None = None
    v_max: float | None = None


@dataclass(frozen=True)
class CorridorConfig:
    positions: tuple[Position, ...]
    planned_headway: float
    n_buses: int
    volume_cost: tuple[float, ...] = ()  # q per station block

    def __post_init__(self):
        if not self.positions:
            raise ConfigurationError("corridor has no positions")
        if not self.planned_headway > 0:
            raise ConfigurationError(f"planned_headway must be > 0, got {self.planned_headway}")
        if self.n_buses < 1:
            raise ConfigurationError(f"n_buses must be >= 1, got {self.n_buses}")
        for j, pos in enumerate(self.positions):
            p = pos.profile
            if pos.kind == PositionKind.ROAD:
                if not p.avg_travel_time > 0:
                    raise ConfigurationError(f"positions[{j}]: road travel time must be > 0")
                if not p.distance_to_next > 0:
                    raise ConfigurationError(f"positions[{j}]: road distance must be > 0")
            if pos.kind != PositionKind.STATION and (p.demand_rate or p.slack):
                raise ConfigurationError(f"positions[{j}]: demand/slack only allowed at stations")
            if not 0 <= p.demand_rate < 1:
                raise ConfigurationError(f"positions[{j}]: demand rate {p.demand_rate} outside [0, 1)")
            if p.slack < 0 or p.avg_travel_time < 0:
                raise ConfigurationError(f"positions[{j}]: negative slack or travel time")
        if self.volume_cost and len(self.volume_cost) != self.n_stations:
            raise ConfigurationError(
                f"volume_cost has {len(self.volume_cost)} entries for {self.n_stations} stations")
        if any(q < 0 for q in self.volume_cost):
            raise ConfigurationError("volume_cost entries must be >= 0")

    @property
    def loop_length(self) -> int:
        return len(self.positions)

    @property
    def n_stations(self) -> int:
        return sum(p.kind == PositionKind.STATION for p in self.positions)

    @property
    def kinds(self) -> np.ndarray:
        return np.array([p.kind for p in self.positions], dtype=int)

    def increments(self) -> np.ndarray:
        """Scheduled time from each position to the next: beta*H + r + s."""
        H = self.planned_headway
        return np.array([p.profile.demand_rate * H + p.profile.avg_travel_time + p.profile.slack
                         for p in self.positions])

    def block_volume_cost(self) -> np.ndarray:
        if self.volume_cost:
            return np.asarray(self.volume_cost, dtype=float)
        return np.ones(self.n_stations)


def build_corridor(travel_times: Sequence[float], demand_rates: Sequence[float], *,
                   planned_headway: float, n_buses: int, slack: float | Sequence[float] = 10.0,
                   distances: Sequence[float] | None = None,
                   v_min: float | Sequence[float] | None = None,
                   v_max: float | Sequence[float] | None = None,
                   nominal_speed: float = 6.0,
                   intersections_per_block: int = 1,
                   volume_cost: Sequence[float] = ()) -> CorridorConfig:
    """Lay out a loop of stations in the canonical block order.

    Missing distances default to ``travel_time * nominal_speed``.
    """
    n = len(travel_times)
    if n == 0:
        raise ConfigurationError("corridor needs at least one station")
    if len(demand_rates) != n:
        raise ConfigurationError("travel_times and demand_rates differ in length")
    if intersections_per_block < 0:
        raise ConfigurationError("intersections_per_block must be >= 0")

    def per_block(value, name):
        if value is None or np.isscalar(value):
            return [value] * n
        if len(value) != n:
            raise ConfigurationError(f"{name} needs {n} entries, got {len(value)}")
        return list(value)

    slacks = per_block(slack, "slack")
    dists = per_block(distances, "distances")
    vmins, vmaxs = per_block(v_min, "v_min"), per_block(v_max, "v_max")

    positions = []
    for b in range(n):
        positions.append(Position(PositionKind.STATION,
                                  StationProfile(len(positions), demand_rate=float(demand_rates[b]),
                                                 slack=float(slacks[b])), b))
        r = float(travel_times[b])
        m = float(dists[b]) if dists[b] is not None else r * nominal_speed
        positions.append(Position(PositionKind.ROAD,
                                  StationProfile(len(positions), avg_travel_time=r, distance_to_next=m),
                                  b, vmins[b], vmaxs[b]))
        for _ in range(intersections_per_block):
            positions.append(Position(PositionKind.INTERSECTION, StationProfile(len(positions)), b))
    return CorridorConfig(tuple(positions), float(planned_headway), int(n_buses),
                          tuple(float(q) for q in volume_cost))


@dataclass(frozen=True)
class ScheduleTable:
    """Scheduled arrival times ``times[i, p]`` for bus i at global position p.

    Global positions run over ``horizon_loops`` loops plus the closing
    terminal arrival, so the array has ``horizon_loops * loop_length + 1``
    columns.
    """

    times: np.ndarray
    loop_length: int
    planned_headway: float
    kinds: np.ndarray = field(repr=False)

    @property
    def n_buses(self) -> int:
        return self.times.shape[0]

    @property
    def n_positions(self) -> int:
        return self.times.shape[1]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bus", "position", "scheduled_time"])
            for i in range(self.n_buses):
                for p in range(self.n_positions):
                    w.writerow([i + 1, p, repr(float(self.times[i, p]))])


def build_schedule(config: CorridorConfig, horizon_loops: int) -> ScheduleTable:
    if horizon_loops < 1:
        raise ConfigurationError(f"horizon_loops must be >= 1, got {horizon_loops}")
    inc = np.tile(config.increments(), horizon_loops)
    offsets = np.concatenate([[0.0], np.cumsum(inc)])
    starts = np.arange(config.n_buses, dtype=float) * config.planned_headway
    times = starts[:, None] + offsets[None, :]
    times.setflags(write=False)
    kinds = np.tile(config.kinds, horizon_loops)
    kinds.setflags(write=False)
    return ScheduleTable(times, config.loop_length, config.planned_headway, kinds)


def schedule_deviation(actual: float, scheduled: float) -> float:
    """Signed lateness; positive means the bus is behind schedule."""
    return actual - scheduled


def headway_deviation(arrival: float, downstream_arrival: float, k: int, planned_headway: float) -> float:
    """Deviation of the k-bus headway from k planned headways."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return (arrival - downstream_arrival) - k * planned_headway
