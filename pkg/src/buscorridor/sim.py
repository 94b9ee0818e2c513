"""Fleet simulation of actual bus motion on the looped corridor, plus classical baselines.

Arrival events are processed in a position-major sweep: every bus's arrival
at position p is known before any bus decides at p, and buses are ordered
front to back, so each decision sees exactly the information that arrival-time
ordering would give it (buses cannot overtake).
"""
from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .control import HOLDING, STRATEGIES, ControlAction, bounds_table, total_control_force
from .corridor import CorridorConfig, PositionKind, build_schedule
from .disturbance import (NoiseStream, TruncatedNormalSpec, UniformSpec, demand_perturbations,
                          effective_demand_rate, travel_delays)
from .observation import (CostCoefficients, FusedObservation, downstream_weights,
                          fused_headway_deviation, running_cost_array)


class SimulationError(RuntimeError):
    """Internal invariant violated during a run."""


class ControllerKind(enum.Enum):
    NO_CONTROL = "none"
    SCHEDULE = "schedule"
    HEADWAY = "headway"
    LEARNED = "learned"


@dataclass(frozen=True)
class BusState:
    bus: int
    position: int
    arrival: float
    scheduled: float
    leader_arrival: float  # bus ahead (or dummy) at the same position
    loop: int = 0

    @property
    def headway(self) -> float:
        return self.arrival - self.leader_arrival

    @property
    def schedule_dev(self) -> float:
        return self.arrival - self.scheduled


@dataclass(frozen=True)
class StepOutcome:
    state: BusState  # state at arrival, where the decision was taken
    next_arrival: float
    observation: FusedObservation
    action: ControlAction
    delay: float
    demand_offset: float
    dwell: float
    travel: float
    push: float
    volume_cost: float
    reward: float


@dataclass(frozen=True)
class SimSettings:
    """Everything besides the corridor that shapes a run."""

    delay: TruncatedNormalSpec | None = TruncatedNormalSpec()  # None: no travel delay
    demand: UniformSpec = UniformSpec()
    coeffs: CostCoefficients = CostCoefficients()
    k: int = 5
    hold_max: float = 20.0
    signal_max: float = 20.0
    strategies: tuple[str, ...] = STRATEGIES
    kappa: float = 0.5
    min_separation: float = 1.0


@dataclass
class DecisionContext:
    """What every bus at one position knows when it decides (arrays over buses)."""

    position: int
    kind: PositionKind
    e: np.ndarray
    d_fused: np.ndarray
    dwell_load: np.ndarray
    headway: np.ndarray
    q: float
    lo: np.ndarray  # (3,) bounds for this position
    hi: np.ndarray
    planned_headway: float
    kappa: float

    @property
    def n(self) -> int:
        return len(self.e)


Controller = Callable[[DecisionContext], np.ndarray]


def advance(arrival, headway, kind: PositionKind, travel_time: float, force, delay, beta_tilde):
    """Arrival at the next position before any ordering constraint.

    Dwell ``beta_tilde * headway`` is incurred only at stations.
    """
    dwell = beta_tilde * headway if kind == PositionKind.STATION else 0.0 * headway
    return arrival + dwell + travel_time + force + delay


def step(bus: BusState, kind: PositionKind, travel_time: float, action: ControlAction,
         delay: float, beta_tilde: float, *, leader_next_arrival: float | None = None,
         min_separation: float = 1.0) -> float:
    """Next arrival time of one bus, pushed behind its leader if it would overtake."""
    nxt = advance(bus.arrival, bus.headway, kind, travel_time, total_control_force(action), delay, beta_tilde)
    if leader_next_arrival is not None and nxt < leader_next_arrival + min_separation:
        nxt = leader_next_arrival + min_separation
    return float(nxt)


def baseline_action(kind: ControllerKind, obs: FusedObservation, bounds_hi: float, *,
                    headway: float, planned_headway: float, kappa: float = 0.5) -> float:
    """Holding time a classical controller applies at a station."""
    if kind == ControllerKind.NO_CONTROL:
        return 0.0
    if kind == ControllerKind.SCHEDULE:
        return min(max(0.0, -obs.schedule_dev), bounds_hi)
    if kind == ControllerKind.HEADWAY:
        return min(max(0.0, kappa * (planned_headway - headway)), bounds_hi)
    raise ValueError(f"no baseline rule for {kind}")


def baseline_controller(kind: ControllerKind) -> Controller:
    def decide(ctx: DecisionContext) -> np.ndarray:
        u = np.zeros((ctx.n, 3))
        if ctx.kind != PositionKind.STATION or kind == ControllerKind.NO_CONTROL:
            return u
        if kind == ControllerKind.SCHEDULE:
            hold = -ctx.e
        elif kind == ControllerKind.HEADWAY:
            hold = ctx.kappa * (ctx.planned_headway - ctx.headway)
        else:
            raise ValueError(f"no baseline rule for {kind}")
        u[:, HOLDING] = np.clip(hold, 0.0, ctx.hi[HOLDING])
        return u
    return decide


@dataclass
class Trajectory:
    """Arrays indexed ``[bus, global_position]`` for one run."""

    scheduled: np.ndarray  # (M, P+1), re-anchored per loop
    actual: np.ndarray  # (M, P+1)
    e: np.ndarray  # (M, P)
    d: np.ndarray  # one-bus headway deviation
    d_fused: np.ndarray
    dwell_load: np.ndarray
    u: np.ndarray  # (M, P, 3)
    w: np.ndarray
    dbeta: np.ndarray
    dwell: np.ndarray
    travel: np.ndarray  # nominal travel time r
    push: np.ndarray  # extra delay from the no-overtaking rule
    cost: np.ndarray
    reward: np.ndarray
    kinds: np.ndarray  # (P,)
    q: np.ndarray  # (P,) block volume cost at each position
    loop_length: int
    meta: dict = field(default_factory=dict)

    @property
    def n_buses(self) -> int:
        return self.e.shape[0]

    @property
    def n_positions(self) -> int:
        return self.e.shape[1]

    @property
    def station_mask(self) -> np.ndarray:
        return self.kinds == PositionKind.STATION

    def outcomes(self, bus: int) -> list[StepOutcome]:
        out = []
        H = self.meta.get("planned_headway", 0.0)
        for p in range(self.n_positions):
            leader = self.actual[bus, p] - (self.d[bus, p] + H)
            state = BusState(bus, p, float(self.actual[bus, p]), float(self.scheduled[bus, p]),
                             float(leader), p // self.loop_length)
            obs = FusedObservation(float(self.e[bus, p]), float(self.d_fused[bus, p]),
                                   float(self.dwell_load[bus, p]))
            out.append(StepOutcome(
                state, float(self.actual[bus, p + 1]), obs, ControlAction(*map(float, self.u[bus, p])),
                float(self.w[bus, p]), float(self.dbeta[bus, p]), float(self.dwell[bus, p]),
                float(self.travel[bus, p]), float(self.push[bus, p]), float(self.q[p]),
                float(self.reward[bus, p])))
        return out

    CSV_COLUMNS = ("bus", "loop", "position", "kind", "scheduled_t", "actual_t",
                   "e", "d", "u_b", "u_k", "u_c", "w", "reward")

    def rows(self):
        names = {int(k): PositionKind(k).name.lower() for k in PositionKind}
        for i in range(self.n_buses):
            for p in range(self.n_positions):
                yield (i + 1, p // self.loop_length + 1, p, names[int(self.kinds[p])],
                       self.scheduled[i, p], self.actual[i, p], self.e[i, p], self.d[i, p],
                       *self.u[i, p], self.w[i, p], self.reward[i, p])

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(self.CSV_COLUMNS)
            for row in self.rows():
                wr.writerow([v if isinstance(v, (int, str)) else repr(float(v)) for v in row])


def simulate(corridor: CorridorConfig, settings: SimSettings, controller: Controller, *,
             loops: int, seed: int, worker: int = 0, episode: int = 0,
             n_buses: int | None = None, reanchor: bool = True, meta: dict | None = None) -> Trajectory:
    M = corridor.n_buses if n_buses is None else n_buses
    L = corridor.loop_length
    P = loops * L
    H = corridor.planned_headway
    k = settings.k
    weights = downstream_weights(k)
    lo_tab, hi_tab = bounds_table(corridor, hold_max=settings.hold_max, signal_max=settings.signal_max,
                                  strategies=settings.strategies)
    kinds_loop = corridor.kinds
    kinds = np.tile(kinds_loop, loops)
    block_q = corridor.block_volume_cost()
    q_loop = np.array([block_q[pos.block] for pos in corridor.positions])
    q = np.tile(q_loop, loops)
    r_loop = np.array([pos.profile.avg_travel_time for pos in corridor.positions])
    beta_loop = np.array([pos.profile.demand_rate for pos in corridor.positions])

    sched = np.array(build_schedule(corridor, loops).times[:M])  # writable copy
    actual = np.empty((M, P + 1))
    actual[:, 0] = sched[:, 0]

    road = np.tile(kinds_loop == PositionKind.ROAD, loops)
    station = np.tile(kinds_loop == PositionKind.STATION, loops)
    w = np.zeros((M, P))
    dbeta = np.zeros((M, P))
    for i in range(M):
        s = NoiseStream(seed, worker, episode, i)
        if settings.delay is not None:
            w[i] = np.where(road, travel_delays(settings.delay, s, P), 0.0)
        dbeta[i] = np.where(station, demand_perturbations(settings.demand, s, P), 0.0)

    shape = (M, P)
    e, d, d_fused, dwell_load = np.empty(shape), np.empty(shape), np.empty(shape), np.empty(shape)
    dwell, travel, push = np.empty(shape), np.empty(shape), np.empty(shape)
    u = np.zeros((M, P, 3))
    m_idx = np.arange(1, k + 1)
    bus_idx = np.arange(M)

    for p in range(P):
        j = p % L
        if reanchor and p > 0 and j == 0:
            sched[:, p:] += (actual[:, p] - sched[:, p])[:, None]
        a_p = actual[:, p]
        t_p = sched[:, p]
        # Downstream arrivals, nearest first; dummies sit on the subject's schedule grid.
        lead = bus_idx[:, None] - m_idx[None, :]
        ahead = np.where(lead >= 0, a_p[np.clip(lead, 0, None)], t_p[:, None] - m_idx[None, :] * H)
        headway = a_p - ahead[:, 0]
        e[:, p] = a_p - t_p
        d[:, p] = headway - H
        d_fused[:, p] = fused_headway_deviation(a_p, ahead, H, weights)
        beta_t = effective_demand_rate(beta_loop[j] + np.zeros(M), dbeta[:, p]) if station[p] else np.zeros(M)
        dwell_load[:, p] = beta_t * headway

        ctx = DecisionContext(p, PositionKind(kinds[p]), e[:, p].copy(), d_fused[:, p].copy(),
                              dwell_load[:, p].copy(), headway.copy(), float(q[p]),
                              lo_tab[j], hi_tab[j], H, settings.kappa)
        u[:, p] = np.clip(controller(ctx), lo_tab[j], hi_tab[j])

        dwell[:, p] = dwell_load[:, p]
        travel[:, p] = r_loop[j]
        nxt = a_p + dwell[:, p] + travel[:, p] + u[:, p].sum(axis=1) + w[:, p]
        raw = nxt.copy()
        for i in range(1, M):
            floor = nxt[i - 1] + settings.min_separation
            if nxt[i] < floor:
                nxt[i] = floor
        if not np.all(np.isfinite(nxt)) or np.any(np.diff(nxt) <= 0):
            raise SimulationError(f"non-positive headway or non-finite arrival at position {p + 1}")
        actual[:, p + 1] = nxt
        push[:, p] = nxt - raw

    cost = running_cost_array(e, d_fused, u, q[None, :], settings.coeffs)
    info = {"seed": seed, "worker": worker, "episode": episode, "planned_headway": H, "loops": loops}
    info.update(meta or {})
    return Trajectory(sched, actual, e, d, d_fused, dwell_load, u, w, dbeta, dwell, travel, push,
                      cost, np.exp(-cost), kinds, q, L, info)
