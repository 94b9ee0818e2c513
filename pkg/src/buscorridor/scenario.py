"""YAML scenario files: one file fully determines a training or evaluation run.

Every section maps onto a dataclass; unknown keys are rejected and errors
carry the dotted path of the offending field.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional, Union, get_args, get_origin, get_type_hints

import yaml

from .control import STRATEGIES, IntersectionVolumeProfile, bounds_table, volume_cost
from .corridor import ConfigurationError, CorridorConfig, build_corridor
from .disturbance import TruncatedNormalSpec, UniformSpec
from .observation import CostCoefficients
from .ppo import TrainerConfig
from .sim import ControllerKind, SimSettings

SCHEMA_VERSION = 1
_REQUIRED = object()


class ScenarioError(ConfigurationError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.field_path = path


@dataclass
class CorridorSection:
    planned_headway: float = _REQUIRED
    travel_time: list[float] = _REQUIRED
    demand_rate: list[float] = _REQUIRED
    slack: Union[float, list[float]] = 10.0
    intersections_per_block: int = 1
    nominal_speed: float = 6.0
    distances: Optional[list[float]] = None
    v_min: Union[float, list[float]] = 5.5
    v_max: Union[float, list[float]] = 6.6


@dataclass
class PhaseProfile:
    ratios: list[float] = _REQUIRED
    major: int = 0


@dataclass
class VolumeSection:
    q: Union[None, float, list[float]] = None  # per-station override
    profiles: Optional[list[list[PhaseProfile]]] = None  # per station, per intersection


@dataclass
class FleetSection:
    n_buses: int = 19
    loops: int = 2


@dataclass
class DelaySection:
    mean: float = 10.0
    std: float = 10.0
    lower: float = -5.0
    upper: float = 30.0


@dataclass
class DemandSection:
    lower: float = -0.02
    upper: float = 0.02


@dataclass
class DisturbanceSection:
    delay: Optional[DelaySection] = field(default_factory=DelaySection)
    demand: Optional[DemandSection] = field(default_factory=DemandSection)


@dataclass
class RewardSection:
    alpha_schedule: float = 0.01
    alpha_headway: float = 0.01
    alpha_holding: float = 0.01
    alpha_signal: float = 0.01
    alpha_speed: float = 0.01
    downstream_buses: int = 5


@dataclass
class ControlSection:
    controller: str = "learned"
    hold_max: float = 20.0
    signal_max: float = 20.0
    strategies: list[str] = field(default_factory=lambda: list(STRATEGIES))
    kappa: float = 0.5
    min_separation: float = 1.0


@dataclass
class TrainingSection:
    episodes: int = 2000
    workers: int = 1
    clip: float = 0.2
    gamma: float = 0.99
    epochs: int = 4
    minibatch: int = 256
    lr: float = 1e-5
    critic_lr: Optional[float] = None
    normalize_advantages: bool = True
    hidden: list[int] = field(default_factory=lambda: [64, 64])
    init_log_std: float = -0.5
    obs_scale: Optional[float] = None
    seed: int = 0
    train_buses: int = 6
    train_loops: int = 1
    checkpoint_every: int = 50
    parallel: bool = False


@dataclass
class EvaluationSection:
    replications: int = 20
    seed: int = 1000
    warmup_fraction: float = 0.5  # of one loop, excluded from summary statistics
    positions: str = "stations"


@dataclass
class Scenario:
    schema_version: int = _REQUIRED
    name: str = _REQUIRED
    corridor: CorridorSection = _REQUIRED
    description: str = ""
    volume: VolumeSection = field(default_factory=VolumeSection)
    fleet: FleetSection = field(default_factory=FleetSection)
    disturbance: DisturbanceSection = field(default_factory=DisturbanceSection)
    reward: RewardSection = field(default_factory=RewardSection)
    control: ControlSection = field(default_factory=ControlSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)

    # -- derived objects -------------------------------------------------
    def block_volume_cost(self) -> list[float]:
        n = len(self.corridor.travel_time)
        v = self.volume
        if v.q is not None and v.profiles is not None:
            raise ScenarioError("volume", "give either q or profiles, not both")
        if v.profiles is not None:
            if len(v.profiles) != n:
                raise ScenarioError("volume.profiles", f"needs {n} entries, got {len(v.profiles)}")
            return [volume_cost([IntersectionVolumeProfile(tuple(p.ratios), p.major) for p in block])
                    for block in v.profiles]
        if v.q is None:
            return [float(self.corridor.intersections_per_block)] * n
        if isinstance(v.q, list):
            if len(v.q) != n:
                raise ScenarioError("volume.q", f"needs {n} entries, got {len(v.q)}")
            return [float(x) for x in v.q]
        return [float(v.q)] * n

    def corridor_config(self, n_buses: int | None = None) -> CorridorConfig:
        c = self.corridor
        try:
            return build_corridor(c.travel_time, c.demand_rate, planned_headway=c.planned_headway,
                                  n_buses=n_buses or self.fleet.n_buses, slack=c.slack,
                                  distances=c.distances, v_min=c.v_min, v_max=c.v_max,
                                  nominal_speed=c.nominal_speed,
                                  intersections_per_block=c.intersections_per_block,
                                  volume_cost=self.block_volume_cost())
        except ScenarioError:
            raise
        except ConfigurationError as exc:
            raise ScenarioError("corridor", str(exc)) from None

    def sim_settings(self, strategies: tuple[str, ...] | None = None) -> SimSettings:
        d, r, c = self.disturbance, self.reward, self.control
        delay = TruncatedNormalSpec(d.delay.mean, d.delay.std, d.delay.lower, d.delay.upper) if d.delay else None
        demand = UniformSpec(d.demand.lower, d.demand.upper) if d.demand else UniformSpec(0.0, 0.0)
        try:
            return SimSettings(delay=delay, demand=demand,
                               coeffs=CostCoefficients(r.alpha_schedule, r.alpha_headway, r.alpha_holding,
                                                       r.alpha_signal, r.alpha_speed),
                               k=r.downstream_buses, hold_max=c.hold_max, signal_max=c.signal_max,
                               strategies=tuple(strategies or c.strategies), kappa=c.kappa,
                               min_separation=c.min_separation)
        except ConfigurationError as exc:
            raise ScenarioError("disturbance/reward", str(exc)) from None

    def trainer_config(self, **overrides) -> TrainerConfig:
        t = dataclasses.asdict(self.training)
        t["hidden"] = tuple(t["hidden"])
        t.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return TrainerConfig(**t)
        except ValueError as exc:
            raise ScenarioError("training", str(exc)) from None

    @property
    def controller(self) -> ControllerKind:
        return ControllerKind(self.control.controller)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dump(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            yaml.safe_dump(self.to_dict(), fh, sort_keys=False)


def _type_name(tp) -> str:
    return getattr(tp, "__name__", str(tp))


def _coerce(tp, value, path: str):
    origin = get_origin(tp)
    if origin is Union:
        options = get_args(tp)
        if value is None:
            if type(None) in options:
                return None
            raise ScenarioError(path, "must not be null")
        errors = []
        for opt in options:
            if opt is type(None):
                continue
            try:
                return _coerce(opt, value, path)
            except ScenarioError as exc:
                errors.append(str(exc))
        raise ScenarioError(path, f"does not match any of {[_type_name(o) for o in options]}")
    if origin is list:
        if not isinstance(value, list):
            raise ScenarioError(path, f"expected a list, got {type(value).__name__}")
        (item,) = get_args(tp)
        return [_coerce(item, v, f"{path}[{i}]") for i, v in enumerate(value)]
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path)
    if tp is bool:
        if not isinstance(value, bool):
            raise ScenarioError(path, f"expected a boolean, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ScenarioError(path, f"expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ScenarioError(path, f"expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ScenarioError(path, f"expected a string, got {value!r}")
        return value
    raise ScenarioError(path, f"unsupported field type {tp}")


def _build(cls, data, path: str):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ScenarioError(path, f"expected a mapping, got {type(data).__name__}")
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ScenarioError(f"{path}.{unknown[0]}" if path else unknown[0], "unknown field")
    kwargs = {}
    for f in dataclasses.fields(cls):
        sub = f"{path}.{f.name}" if path else f.name
        if f.name in data:
            kwargs[f.name] = _coerce(hints[f.name], data[f.name], sub)
        elif f.default is _REQUIRED:
            raise ScenarioError(sub, "required field is missing")
    return cls(**kwargs)


def parse_scenario(data: Any, source: str = "<scenario>") -> Scenario:
    sc = _build(Scenario, data, "")
    if sc.schema_version != SCHEMA_VERSION:
        raise ScenarioError("schema_version", f"unsupported version {sc.schema_version}")
    if sc.control.controller not in {k.value for k in ControllerKind}:
        raise ScenarioError("control.controller", f"unknown controller {sc.control.controller!r}")
    bad = [s for s in sc.control.strategies if s not in STRATEGIES]
    if bad or not sc.control.strategies:
        raise ScenarioError("control.strategies", f"must be a nonempty subset of {list(STRATEGIES)}")
    if sc.evaluation.positions not in ("stations", "all"):
        raise ScenarioError("evaluation.positions", "must be 'stations' or 'all'")
    if sc.evaluation.replications < 1:
        raise ScenarioError("evaluation.replications", "must be >= 1")
    if sc.fleet.loops < 1:
        raise ScenarioError("fleet.loops", "must be >= 1")
    # Build once so invariant violations surface at load time.
    corridor = sc.corridor_config()
    settings = sc.sim_settings()
    try:
        bounds_table(corridor, hold_max=settings.hold_max, signal_max=settings.signal_max,
                     strategies=settings.strategies)
    except ConfigurationError as exc:
        raise ScenarioError("corridor", str(exc)) from None
    sc.trainer_config()
    return sc


def bundled_scenarios() -> list[str]:
    root = resources.files("buscorridor") / "scenarios"
    return sorted(p.name[:-len(".yaml")] for p in root.iterdir() if p.name.endswith(".yaml"))


def load_scenario(path_or_name: str | Path) -> Scenario:
    """Load a scenario file, or a bundled scenario by name (e.g. ``paper-general``)."""
    path = Path(path_or_name)
    if not path.exists():
        candidate = resources.files("buscorridor") / "scenarios" / f"{path_or_name}.yaml"
        if not candidate.is_file():
            raise ScenarioError("", f"no scenario file or bundled scenario named {str(path_or_name)!r}")
        text = candidate.read_text()
        source = str(path_or_name)
    else:
        text = path.read_text()
        source = str(path)
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ScenarioError("", f"cannot parse {source}: {exc}") from None
    return parse_scenario(data, source)
