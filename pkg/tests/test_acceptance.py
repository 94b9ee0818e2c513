"""Acceptance criteria 1-12, each at its stated tolerance.

Criteria 10-12 train policies from scratch (several minutes on one core).
A PASS/FAIL line per criterion is printed in the terminal summary.
"""
import math
import time

import numpy as np
import pytest
from scipy import stats

from buscorridor.control import KIND_COMPONENT, ControlAction, SpeedEnvelope, bounds_for_position, clamp_action
from buscorridor.corridor import PositionKind, build_schedule
from buscorridor.experiment import block_force_means, evaluate, train
from buscorridor.observation import CostCoefficients, FusedObservation, downstream_weights, reward, running_cost
from buscorridor.ppo import (DPPOTrainer, TrainerConfig, clipped_objective, compute_returns, critic_loss_and_grad,
                             plateau_episode, surrogate_and_grad)
from buscorridor.policy import ActorCritic, PolicyController, gaussian_log_prob
from buscorridor.scenario import load_scenario
from buscorridor.sim import ControllerKind, baseline_controller, simulate

from conftest import record_criterion

ALPHA = 0.05  # one-sided significance for every statistical comparison


def _rel(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-8)


def _greater(a, b):
    """One-sided paired Wilcoxon p-value for a > b."""
    return float(stats.wilcoxon(a, b, alternative="greater").pvalue)


def test_criterion_01_schedule_recursion():
    cfg = load_scenario("paper-general").corridor_config()
    t = build_schedule(cfg, 2).times
    block_starts = t[:, ::3]
    inc = np.diff(block_starts, axis=1)
    expected = np.array([p.profile.demand_rate * 300 + q.profile.avg_travel_time + p.profile.slack
                         for p, q in zip(cfg.positions[0::3], cfg.positions[1::3])] * 2)
    first_two = (float(inc[0, 0]), float(inc[0, 1]))
    spacing = np.diff(t, axis=0)
    ok = (first_two == (291.0, 278.0) and np.all(spacing == 300.0)
          and np.allclose(inc, expected[None, :], rtol=0, atol=1e-9))
    assert record_criterion(1, ok, f"station increments {first_two}, spacing == H everywhere: {np.all(spacing == 300.0)}")


def test_criterion_02_fusion_weights():
    ok = all(downstream_weights(k).sum() == 1.0 and np.all(np.diff(downstream_weights(k)) <= 0) for k in range(1, 11))
    ok &= list(downstream_weights(5)) == [1 / 2, 1 / 4, 1 / 8, 1 / 16, 1 / 16]
    assert record_criterion(2, ok, f"k=5 weights {downstream_weights(5).tolist()}")


def test_criterion_03_reward_calculus():
    c = running_cost(FusedObservation(10.0, 5.0, 0.0), ControlAction(2.0, 3.0, 0.0), 1.0, CostCoefficients())
    mono = True
    obs = FusedObservation(4.0, -3.0, 12.0)
    for uk in np.linspace(-20, 20, 21):
        if uk:
            costs = [running_cost(obs, ControlAction(0, uk, 0), q, CostCoefficients()) for q in np.linspace(0, 100, 21)]
            mono &= bool(np.all(np.diff(costs) > 0))
    ok = (reward(0.0) == 1.0 and abs(reward(math.log(2)) - 0.5) <= 1e-12 and abs(c - 1.38) < 1e-12
          and abs(reward(c) - 0.2516) <= 1e-4 and mono)
    assert record_criterion(3, ok, f"cost {c:.4f}, reward {reward(c):.6f}, q-monotone {mono}")


def test_criterion_04_bounds():
    rng = np.random.default_rng(4)
    env = SpeedEnvelope(5.0, 8.0, 250.0, 1500.0)
    worked = bounds_for_position(PositionKind.ROAD, env)
    kinds = list(PositionKind)
    ok = (worked.lo, worked.hi) == (-62.5, 50.0)
    for n in range(100_000):
        kind = kinds[n % 3]
        b = bounds_for_position(kind, env if kind == PositionKind.ROAD else None)
        a = clamp_action(ControlAction(*rng.uniform(-300, 300, 3)), kind, b)
        arr = a.as_array()
        comp = KIND_COMPONENT[kind]
        if clamp_action(a, kind, b) != a or np.count_nonzero(np.delete(arr, comp)) or not b.lo <= arr[comp] <= b.hi:
            ok = False
            break
    assert record_criterion(4, ok, f"road bounds [{worked.lo}, {worked.hi}], 1e5 clamps idempotent and exclusive")


def test_criterion_05_ppo_math():
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(200):
        r = rng.normal(size=int(rng.integers(1, 80)))
        g = float(rng.uniform(0.5, 0.999))
        R = compute_returns(r, 0.0, g)
        direct = np.array([sum(g ** (s - t) * r[s] for s in range(t, len(r))) for t in range(len(r))])
        worst = max(worst, float(np.abs(R - direct).max()))
    a, b = float(clipped_objective(1.5, 2.0, 0.2)), float(clipped_objective(0.5, -1.0, 0.2))
    ok = abs(a - 2.4) < 1e-12 and abs(b + 0.8) < 1e-12 and worst <= 1e-12
    assert record_criterion(5, ok, f"L(1.5, 2)={a:.6g}, L(0.5, -1)={b:.6g}, max return error {worst:.1e}")


def _fd(f, vec, h=1e-6):
    out = np.zeros_like(vec)
    for i in range(len(vec)):
        old = vec[i]
        vec[i] = old + h
        up = f()
        vec[i] = old - h
        out[i] = (up - f()) / (2 * h)
        vec[i] = old
    return out


def test_criterion_06_gradient_checks():
    worst_actor = worst_critic = 0.0
    for seed in range(50):
        rng = np.random.default_rng([6, seed])
        net = ActorCritic.create(rng, hidden=(int(rng.integers(3, 8)), int(rng.integers(3, 8))))
        net.actor.flat[:] = rng.normal(0, 0.5, net.actor.flat.size)
        net.critic.flat[:] = rng.normal(0, 0.5, net.critic.flat.size)
        net.log_std[:] = rng.uniform(-1, 0, 3)
        n = int(rng.integers(2, 10))
        x = rng.normal(size=(n, 7))
        mask = (rng.random((n, 3)) < 0.6).astype(float)
        raw = rng.normal(size=(n, 3)) * mask
        adv = rng.normal(size=n)
        mean, _ = net.actor_mean(x)
        logp_old = gaussian_log_prob(raw, mean, net.log_std, mask) + rng.normal(0, 0.5, n)
        f = lambda: surrogate_and_grad(net, x, raw, mask, logp_old, adv, 0.2)[0]
        _, g, g_std = surrogate_and_grad(net, x, raw, mask, logp_old, adv, 0.2)
        fd = np.concatenate([_fd(f, net.actor.flat), _fd(f, net.log_std)])
        worst_actor = max(worst_actor, _rel(np.concatenate([g, g_std]), fd))
        ret = rng.normal(size=n)
        _, gc = critic_loss_and_grad(net, x, ret)
        worst_critic = max(worst_critic, _rel(gc, _fd(lambda: critic_loss_and_grad(net, x, ret)[0], net.critic.flat)))
    ok = worst_actor < 1e-4 and worst_critic < 1e-4
    assert record_criterion(6, ok, f"worst relative error actor {worst_actor:.1e}, critic {worst_critic:.1e} (50 instances)")


def test_criterion_07_determinism(tmp_path):
    sc = load_scenario("paper-general")
    corridor, settings = sc.corridor_config(), sc.sim_settings()
    same = True
    for run in ("a", "b"):
        cfg = TrainerConfig(episodes=8, workers=2, lr=3e-4, seed=17)
        res = DPPOTrainer(corridor, settings, cfg).train(tmp_path / run)
        simulate(corridor, settings, baseline_controller(ControllerKind.HEADWAY), loops=2, seed=17).to_csv(
            tmp_path / run / "traj.csv")
        simulate(corridor, settings, PolicyController(res.net), loops=2, seed=17).to_csv(tmp_path / run / "pol.csv")
    for name in ("training_log.csv", "traj.csv", "pol.csv"):
        same &= (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert record_criterion(7, same, "training log and trajectory CSVs byte-identical across two runs (2 workers)")


@pytest.fixture(scope="module")
def general():
    return load_scenario("paper-general")


def test_criterion_08_no_control_degradation(general):
    t0 = time.perf_counter()
    ev = evaluate(general, controller=ControllerKind.NO_CONTROL)
    dt = time.perf_counter() - t0
    ok = ev.report.pooled_max >= 150 and dt < 60
    assert record_criterion(8, ok, f"pooled max deviation {ev.report.pooled_max:.1f} s (>= 150), {dt:.1f} s runtime")


def test_criterion_09_baseline_ordering(general):
    t0 = time.perf_counter()
    e = {k: evaluate(general, controller=k).report.per_replication("e.mean")
         for k in (ControllerKind.NO_CONTROL, ControllerKind.SCHEDULE, ControllerKind.HEADWAY)}
    dt = time.perf_counter() - t0
    none, sched, head = e[ControllerKind.NO_CONTROL], e[ControllerKind.SCHEDULE], e[ControllerKind.HEADWAY]
    p_ns = _greater(none, sched)
    p_hs = _greater(head, sched)  # evidence against Schedule >= Headway
    ok = p_ns < ALPHA and p_hs >= ALPHA and dt < 120
    detail = (f"mean|e| none {none.mean():.1f} > schedule {sched.mean():.1f} (p={p_ns:.1e}); "
              f"headway {head.mean():.1f} vs schedule, one-sided p={p_hs:.2f} "
              f"({'significantly above' if p_hs < ALPHA else 'not significantly above'})")
    assert record_criterion(9, ok, detail)


@pytest.mark.slow
def test_criterion_10_trained_control(general):
    res = train(general)
    ev = evaluate(general, net=res.net)
    plateau = plateau_episode(res.curve)
    rep = ev.report
    ok = (len(res.curve) <= 2000 and rep.pooled_e.max <= 60 and rep.pooled_d.max <= 60
          and plateau is not None and plateau <= 1500)
    detail = (f"max|e| {rep.pooled_e.max:.1f} s, max|d| {rep.pooled_d.max:.1f} s (<= 60); plateau at episode "
              f"{plateau} (<= 1500); {len(res.curve)} episodes in {res.wall_time:.0f} s")
    assert record_criterion(10, ok, detail)


@pytest.mark.slow
def test_criterion_11_volume_robustness():
    sc = load_scenario("paper-varying-volume")
    res = train(sc)
    ev = evaluate(sc, net=res.net)
    forces = block_force_means(ev)
    q = forces["q"]
    hold_at_80 = forces["holding"][q == 80]
    rho, _ = stats.spearmanr(q, forces["signal"])
    ok = ev.report.pooled_max <= 60 and np.all(hold_at_80 <= 2.0) and rho < 0
    detail = (f"pooled max {ev.report.pooled_max:.1f} s (<= 60); mean holding at q=80 stations "
              f"{np.round(hold_at_80, 2).tolist()} (<= 2 s); spearman(q, |signal|) {rho:.2f} (< 0)")
    assert record_criterion(11, ok, detail)


@pytest.mark.slow
def test_criterion_12_ablation_ordering():
    sc = load_scenario("paper-highvolume")
    masks = {"holding": ["holding"], "speed": ["speed"], "signal": ["signal"], "all": ["holding", "signal", "speed"]}
    per_rep, pooled = {}, {}
    for name, mask in masks.items():
        net = train(sc, strategies=mask).net
        rep = evaluate(sc, net=net, strategies=mask).report
        per_rep[name] = rep.per_replication("max_deviation")
        pooled[name] = rep.pooled_max
    order = ["holding", "speed", "signal", "all"]
    pvals = [_greater(per_rep[a], per_rep[b]) for a, b in zip(order, order[1:])]
    ranges = {"holding": (140 / 1.6, 140 * 1.6), "speed": (90 / 1.6, 100 * 1.6), "signal": (50 / 1.6, 50 * 1.6),
              "all": (0.0, 70.0)}
    in_range = {k: ranges[k][0] <= pooled[k] <= ranges[k][1] for k in order}
    ok = all(p < ALPHA for p in pvals) and all(in_range.values())
    detail = ("pooled max " + ", ".join(f"{k} {pooled[k]:.1f}{'' if in_range[k] else ' (out of range)'}" for k in order)
              + "; ordering p-values " + ", ".join(f"{p:.1e}" for p in pvals))
    assert record_criterion(12, ok, detail)
