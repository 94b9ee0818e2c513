"""Deviation summaries over trajectories, in memory or from exported CSV logs."""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corridor import PositionKind
from .sim import Trajectory


class EmptyLogError(ValueError):
    """No rows survive the position filter and warm-up exclusion."""


@dataclass(frozen=True)
class SummaryStats:
    max: float
    mean: float
    p95: float

    @classmethod
    def of(cls, values: np.ndarray) -> "SummaryStats":
        a = np.abs(np.asarray(values, dtype=float))
        if a.size == 0:
            raise EmptyLogError("no samples to summarise")
        return cls(float(a.max()), float(a.mean()), float(np.percentile(a, 95)))


@dataclass(frozen=True)
class ReplicationStats:
    replication: int
    e: SummaryStats
    d: SummaryStats

    @property
    def max_deviation(self) -> float:
        return max(self.e.max, self.d.max)


@dataclass
class DeviationReport:
    """Per-replication and pooled statistics of |e| and |d|.

    ``warmup`` positions at the start of every run are excluded; with
    ``stations_only`` only station arrivals count.
    """

    replications: list[ReplicationStats]
    pooled_e: SummaryStats
    pooled_d: SummaryStats
    warmup: int
    stations_only: bool
    meta: dict = field(default_factory=dict)

    @property
    def pooled_max(self) -> float:
        return max(self.pooled_e.max, self.pooled_d.max)

    def per_replication(self, attr: str) -> np.ndarray:
        """e.g. ``per_replication("e.mean")`` or ``per_replication("max_deviation")``."""
        out = []
        for r in self.replications:
            v = r
            for part in attr.split("."):
                v = getattr(v, part)
            out.append(v)
        return np.array(out, dtype=float)

    def to_dict(self) -> dict:
        return {"pooled": {"e": asdict(self.pooled_e), "d": asdict(self.pooled_d),
                           "max_deviation": self.pooled_max},
                "replications": [{"replication": r.replication, "e": asdict(r.e), "d": asdict(r.d),
                                  "max_deviation": r.max_deviation} for r in self.replications],
                "warmup": self.warmup, "stations_only": self.stations_only, "meta": self.meta}

    def to_json(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)


def _selection(kinds: np.ndarray, warmup: int, stations_only: bool) -> np.ndarray:
    sel = np.arange(len(kinds)) >= warmup
    if stations_only:
        sel &= kinds == PositionKind.STATION
    return sel


def build_report(series: Sequence[tuple[np.ndarray, np.ndarray, np.ndarray]], *, warmup: int,
                 stations_only: bool = True, meta: dict | None = None) -> DeviationReport:
    """``series`` holds one ``(e, d, kinds)`` triple per replication, e/d shaped (buses, positions)."""
    if not series:
        raise EmptyLogError("no replications")
    reps, all_e, all_d = [], [], []
    for idx, (e, d, kinds) in enumerate(series):
        sel = _selection(np.asarray(kinds), warmup, stations_only)
        e_sel, d_sel = np.asarray(e)[:, sel], np.asarray(d)[:, sel]
        if e_sel.size == 0:
            raise EmptyLogError(f"replication {idx} has no positions after warm-up {warmup}")
        reps.append(ReplicationStats(idx, SummaryStats.of(e_sel), SummaryStats.of(d_sel)))
        all_e.append(e_sel.ravel())
        all_d.append(d_sel.ravel())
    return DeviationReport(reps, SummaryStats.of(np.concatenate(all_e)), SummaryStats.of(np.concatenate(all_d)),
                           warmup, stations_only, dict(meta or {}))


def report_from_trajectories(trajs: Iterable[Trajectory], *, warmup: int, stations_only: bool = True,
                             meta: dict | None = None) -> DeviationReport:
    return build_report([(t.e, t.d, t.kinds) for t in trajs], warmup=warmup,
                        stations_only=stations_only, meta=meta)


_KIND_BY_NAME = {k.name.lower(): int(k) for k in PositionKind}


def read_trajectory_csv(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Recover ``(e, d, kinds)`` from a trajectory CSV written by :meth:`Trajectory.to_csv`."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise EmptyLogError(f"{path}: trajectory log has no rows")
    buses = sorted({int(r["bus"]) for r in rows})
    positions = sorted({int(r["position"]) for r in rows})
    b_idx = {b: i for i, b in enumerate(buses)}
    e = np.full((len(buses), len(positions)), np.nan)
    d = np.full_like(e, np.nan)
    kinds = np.zeros(len(positions), dtype=int)
    for r in rows:
        i, p = b_idx[int(r["bus"])], int(r["position"])
        e[i, p] = float(r["e"])
        d[i, p] = float(r["d"])
        kinds[p] = _KIND_BY_NAME[r["kind"]]
    if np.isnan(e).any():
        raise ValueError(f"{path}: trajectory log is missing (bus, position) rows")
    return e, d, kinds


def report_from_csv(paths: Sequence[str | Path], *, warmup: int, stations_only: bool = True,
                    meta: dict | None = None) -> DeviationReport:
    return build_report([read_trajectory_csv(p) for p in paths], warmup=warmup,
                        stations_only=stations_only, meta=meta)
