"""Training and evaluation runs driven by a :class:`Scenario`."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .control import STRATEGIES
from .corridor import PositionKind
from .metrics import DeviationReport, report_from_trajectories
from .policy import ActorCritic, PolicyController
from .ppo import DPPOTrainer, TrainResult, plateau_episode
from .scenario import Scenario
from .sim import ControllerKind, Trajectory, baseline_controller, simulate


@dataclass
class Evaluation:
    trajectories: list[Trajectory]
    report: DeviationReport

    @property
    def forces(self) -> np.ndarray:
        """Control forces stacked as (replication, bus, position, component)."""
        return np.stack([t.u for t in self.trajectories])


def warmup_positions(scenario: Scenario) -> int:
    L = scenario.corridor_config(n_buses=1).loop_length
    return int(round(scenario.evaluation.warmup_fraction * L))


def train(scenario: Scenario, *, strategies: Sequence[str] | None = None, out_dir: str | Path | None = None,
          progress: Callable[[int, float], None] | None = None, **overrides) -> TrainResult:
    """Train a policy on the scenario; ``overrides`` replace training-section fields."""
    config = scenario.trainer_config(**overrides)
    trainer = DPPOTrainer(scenario.corridor_config(), scenario.sim_settings(strategies), config)
    result = trainer.train(out_dir, progress)
    if out_dir:
        summary = {"wall_time_s": result.wall_time, "episodes": len(result.log_rows),
                   "plateau_episode": plateau_episode(result.curve),
                   "final_mean_reward": float(result.curve[-100:].mean()) if len(result.curve) else None,
                   "strategies": list(strategies or scenario.control.strategies)}
        with open(Path(out_dir) / "training_summary.json", "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
    return result


def evaluate(scenario: Scenario, *, controller: ControllerKind | None = None, net: ActorCritic | None = None,
             strategies: Sequence[str] | None = None, replications: int | None = None,
             seed: int | None = None) -> Evaluation:
    """Run seeded replications and summarise them.

    Learned policies act with their deterministic mean action.
    """
    kind = controller or scenario.controller
    if kind == ControllerKind.LEARNED:
        if net is None:
            raise ValueError("a learned controller needs a checkpoint")
        policy = PolicyController(net)
    else:
        policy = baseline_controller(kind)
    corridor = scenario.corridor_config()
    settings = scenario.sim_settings(strategies)
    seed = scenario.evaluation.seed if seed is None else seed
    reps = replications or scenario.evaluation.replications
    trajs = [simulate(corridor, settings, policy, loops=scenario.fleet.loops, seed=seed, worker=0, episode=r,
                      meta={"replication": r, "controller": kind.value})
             for r in range(reps)]
    report = report_from_trajectories(trajs, warmup=warmup_positions(scenario),
                                      stations_only=scenario.evaluation.positions == "stations",
                                      meta={"scenario": scenario.name, "controller": kind.value, "seed": seed,
                                            "strategies": list(settings.strategies)})
    return Evaluation(trajs, report)


def write_evaluation(ev: Evaluation, out_dir: str | Path) -> None:
    """Trajectory CSVs, metrics JSON and long-format plot series."""
    out = Path(out_dir)
    (out / "trajectories").mkdir(parents=True, exist_ok=True)
    for r, t in enumerate(ev.trajectories):
        t.to_csv(out / "trajectories" / f"replication_{r:03d}.csv")
    ev.report.to_json(out / "metrics.json")
    kind_name = {int(k): k.name.lower() for k in PositionKind}
    with open(out / "deviation_series.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["replication", "bus", "position", "kind", "series", "value"])
        for r, t in enumerate(ev.trajectories):
            for i in range(t.n_buses):
                for p in range(t.n_positions):
                    kn = kind_name[int(t.kinds[p])]
                    for name, arr in (("actual_time", t.actual), ("scheduled_time", t.scheduled),
                                      ("schedule_deviation", t.e), ("headway_deviation", t.d)):
                        w.writerow([r, i + 1, p, kn, name, repr(float(arr[i, p]))])
    owner = {PositionKind.STATION: 0, PositionKind.INTERSECTION: 1, PositionKind.ROAD: 2}
    with open(out / "control_series.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["replication", "bus", "position", "kind", "strategy", "value"])
        for r, t in enumerate(ev.trajectories):
            for i in range(t.n_buses):
                for p in range(t.n_positions):
                    kind = PositionKind(int(t.kinds[p]))
                    comp = owner[kind]
                    w.writerow([r, i + 1, p, kind_name[int(kind)], STRATEGIES[comp], repr(float(t.u[i, p, comp]))])
    write_volume_series(ev, out / "volume_cost.csv")


def block_force_means(ev: Evaluation) -> dict[str, np.ndarray]:
    """Mean |force| per block for each strategy, over replications, buses and loops."""
    t0 = ev.trajectories[0]
    L = t0.loop_length
    U = np.abs(ev.forces)  # (R, M, P, 3)
    kinds = t0.kinds
    n_blocks = int((kinds[:L] == PositionKind.STATION).sum())
    per_block = L // n_blocks  # blocks are contiguous: station, road, intersections
    out = {}
    for comp, kind in ((0, PositionKind.STATION), (1, PositionKind.INTERSECTION), (2, PositionKind.ROAD)):
        vals = np.zeros(n_blocks)
        for b in range(n_blocks):
            cols = [p for p in range(t0.n_positions) if (p % L) // per_block == b and kinds[p] == kind]
            vals[b] = U[:, :, cols, comp].mean()
        out[STRATEGIES[comp]] = vals
    out["q"] = np.array([t0.q[b * per_block] for b in range(n_blocks)])
    return out


def write_volume_series(ev: Evaluation, path: str | Path) -> None:
    m = block_force_means(ev)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["station", "volume_cost", "mean_abs_holding", "mean_abs_signal", "mean_abs_speed"])
        for b in range(len(m["q"])):
            w.writerow([b + 1, repr(float(m["q"][b])), repr(float(m["holding"][b])),
                        repr(float(m["signal"][b])), repr(float(m["speed"][b]))])
