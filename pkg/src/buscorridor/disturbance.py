"""Seeded travel-delay and demand-rate perturbations.

Every draw is keyed by ``(seed, worker, episode, bus, position)`` so parallel
engines never share generator state and any sample can be regenerated from
its coordinates alone.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corridor import ConfigurationError

_DELAY, _DEMAND, _ACTION = 0, 1, 2
MAX_REJECTIONS = 10_000


@dataclass(frozen=True)
class TruncatedNormalSpec:
    mean: float = 10.0
    std: float = 10.0
    lower: float = -5.0
    upper: float = 30.0

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ConfigurationError(f"truncation bounds need lower < upper, got [{self.lower}, {self.upper}]")
        if not self.std > 0:
            raise ConfigurationError(f"std must be > 0, got {self.std}")


@dataclass(frozen=True)
class UniformSpec:
    lower: float = -0.02
    upper: float = 0.02

    def __post_init__(self):
        if self.lower > self.upper:
            raise ConfigurationError(f"uniform bounds need lower <= upper, got [{self.lower}, {self.upper}]")


@dataclass(frozen=True)
class NoiseStream:
    seed: int
    worker: int = 0
    episode: int = 0
    bus: int = 0
    position: int = 0

    def generator(self, channel: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, channel, self.worker, self.episode, self.bus, self.position])


def _truncated_normal(spec: TruncatedNormalSpec, rng: np.random.Generator, size: int) -> np.ndarray:
    out = rng.normal(spec.mean, spec.std, size)
    bad = (out < spec.lower) | (out > spec.upper)
    for _ in range(MAX_REJECTIONS):
        n_bad = int(bad.sum())
        if n_bad == 0:
            return out
        out[bad] = rng.normal(spec.mean, spec.std, n_bad)
        bad = (out < spec.lower) | (out > spec.upper)
    raise RuntimeError(f"truncated normal rejection did not terminate for {spec}")


def sample_travel_delay(spec: TruncatedNormalSpec, stream: NoiseStream) -> float:
    """One delay draw, redrawing until it lands inside the truncation bounds."""
    return float(_truncated_normal(spec, stream.generator(_DELAY), 1)[0])


def sample_demand_perturbation(spec: UniformSpec, stream: NoiseStream) -> float:
    if spec.lower == spec.upper:
        return float(spec.lower)
    return float(stream.generator(_DEMAND).uniform(spec.lower, spec.upper))


def effective_demand_rate(beta, delta):
    """Nominal plus perturbed demand rate, clamped at zero (dwell is never negative)."""
    out = np.maximum(np.add(beta, delta), 0.0)
    return float(out) if np.ndim(out) == 0 else out


def travel_delays(spec: TruncatedNormalSpec, stream: NoiseStream, n_positions: int) -> np.ndarray:
    """Delays for one bus over ``n_positions`` positions.

    The stream's ``position`` coordinate is ignored; the vector is keyed by
    (seed, worker, episode, bus).
    """
    return _truncated_normal(spec, NoiseStream(stream.seed, stream.worker, stream.episode, stream.bus)
                             .generator(_DELAY), n_positions)


def demand_perturbations(spec: UniformSpec, stream: NoiseStream, n_positions: int) -> np.ndarray:
    if spec.lower == spec.upper:
        return np.full(n_positions, float(spec.lower))
    rng = NoiseStream(stream.seed, stream.worker, stream.episode, stream.bus).generator(_DEMAND)
    return rng.uniform(spec.lower, spec.upper, n_positions)


def action_generator(seed: int, worker: int, episode: int) -> np.random.Generator:
    """Exploration-noise stream for one rollout."""
    return NoiseStream(seed, worker, episode).generator(_ACTION)
