"""Synchronous distributed PPO: workers roll out the current policy snapshot,
one coordinator updates actor and critic from the pooled batch."""
from __future__ import annotations

import csv
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterator

import numpy as np

from .corridor import CorridorConfig, PositionKind
from .disturbance import action_generator
from .policy import (ActorCritic, AdamState, NumericalFault, PolicyController, gaussian_log_prob,
                     optimizer_step)
from .sim import SimSettings, simulate

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainerConfig:
    episodes: int = 2000
    workers: int = 1
    clip: float = 0.2
    gamma: float = 0.99
    epochs: int = 4
    minibatch: int = 256
    lr: float = 1e-5
    critic_lr: float | None = None  # defaults to lr
    normalize_advantages: bool = True
    hidden: tuple[int, ...] = (64, 64)
    init_log_std: float = -0.5
    obs_scale: float | None = None  # defaults to the planned headway
    seed: int = 0
    train_buses: int = 6
    train_loops: int = 1
    checkpoint_every: int = 50  # rounds
    parallel: bool = False

    def __post_init__(self):
        if not 0 < self.clip < 1:
            raise ValueError(f"clip must be in (0, 1), got {self.clip}")
        if not 0 < self.gamma < 1:
            raise ValueError(f"gamma must be in (0, 1), got {self.gamma}")
        if self.workers < 1 or self.episodes < 1 or self.epochs < 1 or self.minibatch < 1:
            raise ValueError("workers, episodes, epochs and minibatch must be >= 1")


@dataclass(frozen=True)
class Transition:
    features: np.ndarray
    action: np.ndarray
    log_prob: float
    reward: float
    value: float
    done: bool
    kind: PositionKind


@dataclass
class RolloutBatch:
    """Decisions of one worker episode, flattened bus by bus in time order."""

    x: np.ndarray  # (n, F) network features
    raw: np.ndarray  # (n, 3) pre-squash samples
    mask: np.ndarray  # (n, 3) active action dimensions
    log_prob: np.ndarray
    reward: np.ndarray
    value: np.ndarray
    done: np.ndarray
    returns: np.ndarray
    worker: int
    episode: int
    version: int

    def __len__(self) -> int:
        return len(self.reward)

    @property
    def mean_reward(self) -> float:
        return float(self.reward.mean())

    def transitions(self) -> Iterator[Transition]:
        for t in range(len(self)):
            yield Transition(self.x[t], self.raw[t], float(self.log_prob[t]), float(self.reward[t]),
                             float(self.value[t]), bool(self.done[t]),
                             PositionKind(int(np.argmax(self.x[t, 3:6]))))

    @staticmethod
    def concat(batches: list["RolloutBatch"]) -> "RolloutBatch":
        versions = {b.version for b in batches}
        if len(versions) != 1:
            raise ValueError(f"batches from several policy versions: {sorted(versions)}")
        cat = lambda name: np.concatenate([getattr(b, name) for b in batches])
        return RolloutBatch(cat("x"), cat("raw"), cat("mask"), cat("log_prob"), cat("reward"),
                            cat("value"), cat("done"), cat("returns"), -1, -1, versions.pop())


def compute_returns(rewards, bootstrap: float, gamma: float) -> np.ndarray:
    """Discounted reward-to-go with the tail closed by ``bootstrap``."""
    rewards = np.asarray(rewards, dtype=float)
    out = np.empty_like(rewards)
    running = bootstrap
    for t in range(len(rewards) - 1, -1, -1):
        running = rewards[t] + gamma * running
        out[t] = running
    return out


def compute_advantages(returns, values, normalize: bool = True) -> np.ndarray:
    adv = np.asarray(returns, dtype=float) - np.asarray(values, dtype=float)
    if normalize and len(adv) > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    return adv


def clipped_objective(ratio, advantage, clip: float):
    """Per-sample min(p*A, clip(p, 1-eps, 1+eps)*A)."""
    ratio = np.asarray(ratio, dtype=float)
    return np.minimum(ratio * advantage, np.clip(ratio, 1 - clip, 1 + clip) * advantage)


def surrogate_and_grad(net: ActorCritic, x, raw, mask, logp_old, adv, clip: float):
    """Mean clipped surrogate and its gradient w.r.t. (actor params, log_std)."""
    out, acts = net.actor.forward(x)
    mean = np.tanh(out)
    logp = gaussian_log_prob(raw, mean, net.log_std, mask)
    ratio = np.exp(logp - logp_old)
    obj = clipped_objective(ratio, adv, clip)
    # The unclipped branch is the one selected unless the ratio left the trust region in the
    # direction the advantage rewards.
    active = ~(((adv > 0) & (ratio > 1 + clip)) | ((adv < 0) & (ratio < 1 - clip)))
    n = len(adv)
    d_logp = np.where(active, ratio * adv, 0.0) / n
    inv_var = np.exp(-2 * net.log_std)
    diff = raw - mean
    d_mean = d_logp[:, None] * diff * inv_var * mask
    d_out = d_mean * (1 - mean ** 2)
    g_actor = net.actor.backward(acts, d_out)
    g_log_std = (d_logp[:, None] * (diff ** 2 * inv_var - 1.0) * mask).sum(axis=0)
    return float(obj.mean()), g_actor, g_log_std


def critic_loss_and_grad(net: ActorCritic, x, returns):
    out, acts = net.critic.forward(x)
    err = out[:, 0] - returns
    loss = float(np.mean(err ** 2))
    d_out = (2.0 / len(err)) * err[:, None]
    return loss, net.critic.backward(acts, d_out)


@dataclass
class Optimizers:
    actor: AdamState
    log_std: AdamState
    critic: AdamState

    @classmethod
    def create(cls, net: ActorCritic, lr: float, critic_lr: float) -> "Optimizers":
        return cls(AdamState.zeros(net.actor.flat.size, lr), AdamState.zeros(3, lr),
                   AdamState.zeros(net.critic.flat.size, critic_lr))

    def arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name in ("actor", "log_std", "critic"):
            s = getattr(self, name)
            out[f"opt_{name}_m"], out[f"opt_{name}_v"] = s.m, s.v
            out[f"opt_{name}_step"] = np.array([s.step])
        return out

    def restore(self, arrays: dict[str, np.ndarray]) -> None:
        for name in ("actor", "log_std", "critic"):
            s = getattr(self, name)
            s.m[:] = arrays[f"opt_{name}_m"]
            s.v[:] = arrays[f"opt_{name}_v"]
            s.step = int(arrays[f"opt_{name}_step"][0])


def _minibatches(n: int, size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, size):
        yield order[start:start + size]


def ppo_actor_update(net: ActorCritic, batch: RolloutBatch, adv: np.ndarray, opt: Optimizers, *,
                     clip: float, epochs: int, minibatch: int, rng: np.random.Generator) -> float:
    """Ascend the clipped surrogate; returns the surrogate at the old policy."""
    surrogate0 = float(np.mean(adv))
    for _ in range(epochs):
        for idx in _minibatches(len(batch), minibatch, rng):
            _, g, g_std = surrogate_and_grad(net, batch.x[idx], batch.raw[idx], batch.mask[idx],
                                             batch.log_prob[idx], adv[idx], clip)
            if not (np.all(np.isfinite(g)) and np.all(np.isfinite(g_std))):
                raise NumericalFault("non-finite actor gradient")
            optimizer_step(net.actor.flat, -g, opt.actor)
            optimizer_step(net.log_std, -g_std, opt.log_std)
    return surrogate0


def critic_update(net: ActorCritic, batch: RolloutBatch, opt: Optimizers, *, epochs: int,
                  minibatch: int, rng: np.random.Generator) -> float:
    """Descend the squared return error; returns the loss before the update."""
    loss0, _ = critic_loss_and_grad(net, batch.x, batch.returns)
    for _ in range(epochs):
        for idx in _minibatches(len(batch), minibatch, rng):
            loss, g = critic_loss_and_grad(net, batch.x[idx], batch.returns[idx])
            if not np.isfinite(loss):
                raise NumericalFault("non-finite critic loss")
            optimizer_step(net.critic.flat, g, opt.critic)
    return loss0


def collect_rollout(net: ActorCritic, corridor: CorridorConfig, settings: SimSettings,
                    config: TrainerConfig, worker: int, round_idx: int, version: int) -> RolloutBatch:
    """Run one training episode with a private engine and noise streams."""
    controller = PolicyController(net, rng=action_generator(config.seed, worker, round_idx))
    traj = simulate(corridor, settings, controller, loops=config.train_loops, seed=config.seed,
                    worker=worker + 1, episode=round_idx, n_buses=config.train_buses)
    records = sorted(controller.records, key=lambda r: r[0])
    P = traj.n_positions
    M = traj.n_buses
    # records are position-major; reorder to bus-major time series
    x = np.stack([r[1] for r in records], axis=1)  # (M, P, F)
    raw = np.stack([r[2] for r in records], axis=1)
    logp = np.stack([r[3] for r in records], axis=1)
    mask = np.stack([r[4] for r in records], axis=1)
    value = np.stack([r[5] for r in records], axis=1)
    done = np.zeros((M, P), dtype=bool)
    done[:, -1] = True
    returns = np.stack([compute_returns(traj.reward[i], 0.0, config.gamma) for i in range(M)])
    flat = lambda a: a.reshape(M * P, *a.shape[2:])
    return RolloutBatch(flat(x), flat(raw), flat(mask), flat(logp), flat(traj.reward), flat(value),
                        flat(done), flat(returns), worker, round_idx * config.workers + worker, version)


def _collect_task(args):
    return collect_rollout(*args)


@dataclass
class TrainResult:
    net: ActorCritic
    log_rows: list[dict] = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def curve(self) -> np.ndarray:
        return np.array([r["mean_reward"] for r in self.log_rows])


LOG_COLUMNS = ("episode", "round", "worker", "policy_version", "mean_reward", "actor_surrogate", "critic_loss")


def write_training_log(rows: list[dict], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for r in rows:
            w.writerow([r[c] if isinstance(r[c], int) else repr(float(r[c])) for c in LOG_COLUMNS])


class DPPOTrainer:
    def __init__(self, corridor: CorridorConfig, settings: SimSettings, config: TrainerConfig,
                 net: ActorCritic | None = None):
        self.corridor = corridor
        self.settings = settings
        self.config = config
        scale = config.obs_scale or corridor.planned_headway
        self.net = net or ActorCritic.create(np.random.default_rng([config.seed, 7]), hidden=config.hidden,
                                             init_log_std=config.init_log_std, obs_scale=scale)
        self.opt = Optimizers.create(self.net, config.lr, config.critic_lr or config.lr)
        self.version = 0
        self.round = 0
        self.log_rows: list[dict] = []

    @property
    def n_rounds(self) -> int:
        return -(-self.config.episodes // self.config.workers)

    def collect(self, pool=None) -> list[RolloutBatch]:
        snapshot = self.net.copy()
        args = [(snapshot, self.corridor, self.settings, self.config, w, self.round, self.version)
                for w in range(self.config.workers)]
        if pool is None:
            return [collect_rollout(*a) for a in args]
        return list(pool.map(_collect_task, args))

    def update(self, batches: list[RolloutBatch]) -> tuple[float, float]:
        for b in batches:
            if b.version != self.version:
                raise ValueError(f"stale batch: version {b.version}, policy at {self.version}")
        batch = RolloutBatch.concat(batches)
        adv = compute_advantages(batch.returns, batch.value, self.config.normalize_advantages)
        rng = np.random.default_rng([self.config.seed, 11, self.round])
        c = self.config
        surrogate = ppo_actor_update(self.net, batch, adv, self.opt, clip=c.clip, epochs=c.epochs,
                                     minibatch=c.minibatch, rng=rng)
        critic_loss = critic_update(self.net, batch, self.opt, epochs=c.epochs, minibatch=c.minibatch, rng=rng)
        self.version += 1
        return surrogate, critic_loss

    # -- checkpoints -----------------------------------------------------
    def save(self, path: str | Path) -> None:
        extra = self.opt.arrays()
        extra["log_curve"] = np.array([[r[c] for c in LOG_COLUMNS] for r in self.log_rows], dtype=float) \
            if self.log_rows else np.zeros((0, len(LOG_COLUMNS)))
        self.net.save(path, extra, meta={"round": self.round, "version": self.version,
                                         "seed": self.config.seed, "workers": self.config.workers})

    def restore(self, path: str | Path) -> None:
        net, arrays, meta = ActorCritic.load(path)
        if net.header()["actor_sizes"] != self.net.header()["actor_sizes"]:
            raise ValueError("checkpoint architecture does not match the trainer configuration")
        self.net = net
        self.opt = Optimizers.create(net, self.config.lr, self.config.critic_lr or self.config.lr)
        self.opt.restore(arrays)
        self.round, self.version = int(meta["round"]), int(meta["version"])
        ints = {"episode", "round", "worker", "policy_version"}
        self.log_rows = [{c: (int(v) if c in ints else float(v)) for c, v in zip(LOG_COLUMNS, row)}
                         for row in arrays["log_curve"]]

    def train(self, out_dir: str | Path | None = None,
              progress: Callable[[int, float], None] | None = None) -> TrainResult:
        start = time.perf_counter()
        out = Path(out_dir) if out_dir else None
        if out:
            out.mkdir(parents=True, exist_ok=True)
        pool = ProcessPoolExecutor(self.config.workers) if self.config.parallel and self.config.workers > 1 else None
        try:
            while self.round < self.n_rounds:
                batches = self.collect(pool)
                good = self.net.copy()
                try:
                    surrogate, critic_loss = self.update(batches)
                except NumericalFault:
                    self.net = good
                    if out:
                        self.save(out / "checkpoint_last_good.npz")
                    raise
                for b in batches:
                    if b.episode >= self.config.episodes:
                        continue
                    self.log_rows.append({"episode": b.episode, "round": self.round, "worker": b.worker,
                                          "policy_version": b.version, "mean_reward": b.mean_reward,
                                          "actor_surrogate": surrogate, "critic_loss": critic_loss})
                self.round += 1
                if progress:
                    progress(self.round, float(np.mean([b.mean_reward for b in batches])))
                if out and self.round % self.config.checkpoint_every == 0:
                    self.save(out / "checkpoint.npz")
        finally:
            if pool is not None:
                pool.shutdown()
        if out:
            self.save(out / "checkpoint.npz")
            write_training_log(self.log_rows, out / "training_log.csv")
        return TrainResult(self.net, list(self.log_rows), time.perf_counter() - start)


def plateau_episode(curve, *, window: int = 100, tol: float = 0.05) -> int | None:
    """First episode from which every later ``window``-episode block mean stays
    within ``tol`` (relative) of the final block mean; ``None`` if never."""
    curve = np.asarray(curve, dtype=float)
    n_blocks = len(curve) // window
    if n_blocks < 2:
        return None
    means = curve[len(curve) - n_blocks * window:].reshape(n_blocks, window).mean(axis=1)
    final = means[-1]
    ok = np.abs(means - final) <= tol * abs(final)
    first = n_blocks - 1
    while first > 0 and ok[first - 1]:
        first -= 1
    return len(curve) - (n_blocks - first) * window


def with_overrides(config: TrainerConfig, **kw) -> TrainerConfig:
    return replace(config, **{k: v for k, v in kw.items() if v is not None})
