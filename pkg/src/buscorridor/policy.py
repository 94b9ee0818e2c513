"""Actor and critic networks with hand-written backpropagation, a Gaussian
action head and an Adam optimiser.

Networks are plain tanh MLPs with a linear output. Parameters live in one
flat float64 vector; layer matrices are views into it, so checkpointing and
optimiser updates work on the flat vector directly.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .sim import DecisionContext

CHECKPOINT_VERSION = 1
N_FEATURES = 7
HOLD_INIT_MEAN = -0.9  # squashed holding mean at initialisation (5% of the range)
LOG_2PI = math.log(2.0 * math.pi)


class NumericalFault(FloatingPointError):
    """Non-finite values appeared in a network or a loss."""


def _check_finite(x: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericalFault(f"non-finite {what}: {x[~np.isfinite(x)][:5]}")
    return x


class MLP:
    """tanh MLP ``sizes[0] -> ... -> sizes[-1]`` over a flat parameter vector."""

    def __init__(self, sizes: tuple[int, ...], flat: np.ndarray | None = None):
        self.sizes = tuple(int(s) for s in sizes)
        n = sum(a * b + b for a, b in zip(self.sizes[:-1], self.sizes[1:]))
        if flat is None:
            flat = np.zeros(n)
        if flat.shape != (n,):
            raise ValueError(f"expected {n} parameters for {self.sizes}, got {flat.shape}")
        self.flat = flat
        self.layers = []
        off = 0
        for a, b in zip(self.sizes[:-1], self.sizes[1:]):
            W = self.flat[off:off + a * b].reshape(a, b)
            off += a * b
            bias = self.flat[off:off + b]
            off += b
            self.layers.append((W, bias))

    @classmethod
    def init(cls, sizes, rng: np.random.Generator, out_scale: float = 0.01) -> "MLP":
        net = cls(sizes)
        for idx, (W, b) in enumerate(net.layers):
            fan_in = W.shape[0]
            gain = out_scale if idx == len(net.layers) - 1 else 1.0
            W[:] = rng.normal(0.0, gain / math.sqrt(fan_in), W.shape)
            b[:] = 0.0
        return net

    def forward(self, x: np.ndarray):
        """Output and the hidden activations needed by :meth:`backward`."""
        acts = [x]
        h = x
        for W, b in self.layers[:-1]:
            h = np.tanh(h @ W + b)
            acts.append(h)
        W, b = self.layers[-1]
        return h @ W + b, acts

    def backward(self, acts: list[np.ndarray], d_out: np.ndarray) -> np.ndarray:
        grad = np.zeros_like(self.flat)
        g_layers = MLP(self.sizes, grad).layers
        delta = d_out
        for idx in range(len(self.layers) - 1, -1, -1):
            W, _ = self.layers[idx]
            gW, gb = g_layers[idx]
            gW[:] = acts[idx].T @ delta
            gb[:] = delta.sum(axis=0)
            if idx:
                delta = (delta @ W.T) * (1.0 - acts[idx] ** 2)
        return grad


@dataclass
class ActorCritic:
    """Shared actor (3 squashed means + state-independent log-std) and critic."""

    actor: MLP
    critic: MLP
    log_std: np.ndarray
    obs_scale: float = 300.0
    q_scale: float = 100.0

    @classmethod
    def create(cls, rng: np.random.Generator, *, hidden=(64, 64), init_log_std: float = -0.5,
               obs_scale: float = 300.0, q_scale: float = 100.0) -> "ActorCritic":
        actor = MLP.init((N_FEATURES, *hidden, 3), rng, out_scale=0.01)
        # Holding is one-sided on [0, hold_max]; start near "no hold" rather than mid-range.
        actor.layers[-1][1][0] = math.atanh(HOLD_INIT_MEAN)
        critic = MLP.init((N_FEATURES, *hidden, 1), rng, out_scale=1.0)
        return cls(actor, critic, np.full(3, float(init_log_std)), obs_scale, q_scale)

    @property
    def hidden(self) -> tuple[int, ...]:
        return self.actor.sizes[1:-1]

    def features(self, ctx: DecisionContext) -> np.ndarray:
        x = np.zeros((ctx.n, N_FEATURES))
        x[:, 0] = ctx.e / self.obs_scale
        x[:, 1] = ctx.d_fused / self.obs_scale
        x[:, 2] = ctx.dwell_load / self.obs_scale
        x[:, 3 + int(ctx.kind)] = 1.0
        x[:, 6] = ctx.q / self.q_scale
        return x

    def actor_mean(self, x: np.ndarray):
        out, acts = self.actor.forward(x)
        mean = np.tanh(out)
        return _check_finite(mean, "actor output"), acts

    def value(self, x: np.ndarray) -> np.ndarray:
        out, _ = self.critic.forward(x)
        return _check_finite(out[:, 0], "critic output")

    # -- checkpoints -----------------------------------------------------
    def header(self) -> dict:
        return {"version": CHECKPOINT_VERSION, "n_features": N_FEATURES,
                "actor_sizes": list(self.actor.sizes), "critic_sizes": list(self.critic.sizes),
                "obs_scale": self.obs_scale, "q_scale": self.q_scale}

    def save(self, path: str | Path, extra: dict[str, np.ndarray] | None = None,
             meta: dict | None = None) -> None:
        header = self.header()
        header["meta"] = meta or {}
        arrays = {"actor": self.actor.flat, "critic": self.critic.flat, "log_std": self.log_std}
        arrays.update(extra or {})
        with open(path, "wb") as fh:
            np.savez(fh, header=np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8),
                     **arrays)

    @classmethod
    def load(cls, path: str | Path, *, expect_features: int = N_FEATURES):
        with np.load(path) as z:
            header = json.loads(bytes(z["header"]).decode())
            arrays = {k: z[k].copy() for k in z.files if k != "header"}
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        if header["n_features"] != expect_features:
            raise ValueError(f"checkpoint expects {header['n_features']} features, not {expect_features}")
        net = cls(MLP(tuple(header["actor_sizes"]), arrays.pop("actor")),
                  MLP(tuple(header["critic_sizes"]), arrays.pop("critic")),
                  arrays.pop("log_std"), header["obs_scale"], header["q_scale"])
        return net, arrays, header.get("meta", {})

    def copy(self) -> "ActorCritic":
        return ActorCritic(MLP(self.actor.sizes, self.actor.flat.copy()),
                           MLP(self.critic.sizes, self.critic.flat.copy()),
                           self.log_std.copy(), self.obs_scale, self.q_scale)


def gaussian_log_prob(x: np.ndarray, mean: np.ndarray, log_std: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Log density of raw samples, summed over the unmasked action dimensions."""
    z = (x - mean) / np.exp(log_std)
    per_dim = -0.5 * z ** 2 - log_std - 0.5 * LOG_2PI
    return (per_dim * mask).sum(axis=-1)


def to_bounds(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Map raw (-1, 1) values affinely into [lo, hi], clamping anything outside."""
    return lo + (np.clip(x, -1.0, 1.0) + 1.0) * 0.5 * (hi - lo)


def active_mask(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    return (hi > lo).astype(float)


def sample_and_log_prob(mean: np.ndarray, log_std: np.ndarray, lo: np.ndarray, hi: np.ndarray,
                        rng: np.random.Generator):
    """Draw raw Gaussian actions; return (bounded action, raw sample, log-prob)."""
    mask = active_mask(lo, hi)
    x = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
    x = np.where(mask > 0, x, 0.0)
    return to_bounds(x, lo, hi) * mask, x, gaussian_log_prob(x, mean, log_std, mask)


@dataclass
class PolicyController:
    """Sim-engine controller backed by an :class:`ActorCritic`.

    With ``rng`` set it samples and records every decision for training;
    otherwise it acts with the deterministic mean action.
    """

    net: ActorCritic
    rng: np.random.Generator | None = None
    records: list = field(default_factory=list)

    def __call__(self, ctx: DecisionContext) -> np.ndarray:
        x = self.net.features(ctx)
        mean, _ = self.net.actor_mean(x)
        lo = np.broadcast_to(ctx.lo, mean.shape)
        hi = np.broadcast_to(ctx.hi, mean.shape)
        if self.rng is None:
            return to_bounds(mean, lo, hi) * active_mask(lo, hi)
        action, raw, logp = sample_and_log_prob(mean, self.net.log_std, lo, hi, self.rng)
        self.records.append((ctx.position, x, raw, logp, active_mask(lo, hi), self.net.value(x)))
        return action


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, lr: float = 1e-5) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0, lr)


def optimizer_step(params: np.ndarray, grads: np.ndarray, state: AdamState) -> None:
    """In-place Adam descent step on ``params``."""
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ValueError(f"shape mismatch: params {params.shape}, grads {grads.shape}, state {state.m.shape}")
    state.step += 1
    state.m *= state.beta1
    state.m += (1 - state.beta1) * grads
    state.v *= state.beta2
    state.v += (1 - state.beta2) * grads ** 2
    m_hat = state.m / (1 - state.beta1 ** state.step)
    v_hat = state.v / (1 - state.beta2 ** state.step)
    params -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
