"""Acceptance suite: one test per criterion, each reporting a single PASS/FAIL line."""

from __future__ import annotations

import time

import numpy as np
import pytest

from evacharge import adapt, cli, mappo
from evacharge.autodiff import gradcheck
from evacharge.mip.model import MipInstance, check_solution, objective_coeffs, random_instance, solve_exact
from evacharge.metrics import afd_report, gini, risk_metrics, summarize
from evacharge.network import line_graph_adjacency
from evacharge.policies import FixedTargetPolicy, GreedyPolicy, HoldPolicy
from evacharge.router import make_router, oracle_forecaster
from evacharge.scenario import load_scenario
from evacharge.simulator import SnapshotRouter, run_episode
from evacharge.stpm import StpmConfig, generate_training_data, init_stpm, model_mse, persistence_mse_on, stpm_loss, train_stpm
from conftest import ACCEPTANCE, make_net
from oracles import brute_force_mip, nearest_brute, risk_integral_simpson

EVAL_SEEDS = list(range(10))
MAPPO_ITERATIONS = 120
STPM_EPOCHS = 10


def report(n: int, name: str, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d} {name}: {'PASS' if ok else 'FAIL'} ({detail})"
    ACCEPTANCE.append(line)
    print(line)
    assert ok, line


def _are(sc, policy, seed, router=None) -> float:
    res = run_episode(sc, policy, seed, router=router)
    return risk_metrics(res.queue, res.risk, res.n_evac, res.step_min).are


# ------------------------------------------------------------------ 1
def test_criterion_01_reward_identity():
    actor = mappo.init_actor(0)
    worst = 0.0
    n = 0
    for name, variant in [("default", None), ("default", "two_components"), ("tiny", None)]:
        sc = load_scenario(name, variant)
        for pol in (HoldPolicy(), GreedyPolicy(), mappo.ActorPolicy(actor, True)):
            for seed in (0, 1):
                res = run_episode(sc, pol, seed)
                risk = float((res.risk * res.queue).sum() * res.step_min / 60.0)
                err = abs(res.epoch_rewards.sum() + risk) / max(abs(risk), 1e-300)
                worst = max(worst, err if risk else abs(res.epoch_rewards.sum()))
                n += 1
    report(1, "reward identity", worst <= 1e-9, f"{n} episodes, max rel err {worst:.2e}")


# ------------------------------------------------------------------ 2
def test_criterion_02_conservation():
    variants = [None, "higher_participation", "flatter", "concentrated", "reduced_capacity", "two_components"]
    actor = mappo.init_actor(1)
    bad = []
    max_kwh = 0.0
    for ep in range(20):
        sc = load_scenario("default", variants[ep % len(variants)])
        pol = GreedyPolicy() if ep % 2 == 0 else mappo.ActorPolicy(actor, True)
        box = {}
        run_episode(sc, pol, 100 + ep, on_epoch=lambda sim, m: box.setdefault("sim", sim))
        sim = box["sim"]
        for row in sim.station_flow_balance():
            arrivals, served, queued, serving, stranded = row
            if arrivals != served + queued + serving + stranded:
                bad.append((ep, row))
        for tr in sim.trucks:
            max_kwh = max(max_kwh, tr.delivered_kwh)
            if tr.delivered_kwh > sc.fleet.capability_kwh + 1e-9:
                bad.append((ep, tr.id, tr.delivered_kwh))
    report(2, "conservation", not bad, f"20 episodes, violations {len(bad)}, max truck delivery {max_kwh:.1f} kWh")


# ------------------------------------------------------------------ 3
def test_criterion_03_mip_exactness():
    rng = np.random.default_rng(7)
    start = time.monotonic()
    worst, failures = 0.0, 0
    for t in range(25):
        K, F, P = int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
        if t % 5 == 0:
            K, F, P = 2, 3, 3
        inst = random_instance(rng, K, F, P)
        sol = solve_exact(inst)
        bf = brute_force_mip(inst)
        worst = max(worst, abs(sol.objective - bf) / max(abs(bf), 1e-12))
        failures += bool(check_solution(inst, sol))
    elapsed = time.monotonic() - start
    ok = worst <= 1e-6 and failures == 0 and elapsed < 120.0
    report(3, "MIP exactness", ok, f"25 instances, max rel gap {worst:.2e}, checker failures {failures}, {elapsed:.0f}s")


# ------------------------------------------------------------------ 4
def test_criterion_04_objective_integration():
    landfall, offsets = 48.0, {"A": 0.0, "B": 6.0, "C": 9.0, "safe": 12.0}
    taus = [6.0, 9.0, 12.0, 15.0, 18.0]
    # epoch starts relative to saturation: two before, one straddling, two after
    rel = [-10.0, -2.5, -1.0, 0.0, 3.0]
    worst, n = 0.0, 0
    for tau in taus:
        for zone, off in offsets.items():
            sat = landfall + off
            for r in rel:
                inst = MipInstance(
                    arrivals=np.zeros((1, 1)), chargers=np.zeros((1, 1)), q0=np.zeros(1), l0=np.zeros((0, 1)),
                    relocate=np.zeros((0, 1, 1, 1)), capability=np.zeros(0), sat_h=[sat], t0_h=sat + r, tau_h=tau,
                )
                a, b, _ = objective_coeffs(inst, 0, 0)
                t0 = sat + r
                for got, w in ((a, (1.0, 0.0)), (b, (0.0, 1.0))):
                    want = risk_integral_simpson(t0, t0 + 2.5, sat, tau, *w)
                    worst = max(worst, abs(got - want) / abs(want))
                n += 1
    report(4, "objective integration", n == 100 and worst <= 1e-6, f"{n} grid points, max rel err {worst:.2e}")


# ------------------------------------------------------------------ 5
def test_criterion_05_gradients():
    rng = np.random.default_rng(5)
    F = 4
    actor, critic = mappo.init_actor(5, d_model=8), mappo.init_critic(5, d_model=8)
    x = np.abs(rng.normal(size=(3, F, mappo.N_FEATURES))) * 0.5
    mask = rng.random((3, F)) < 0.8
    mask[:, 0] = True
    acts = np.zeros(3, dtype=np.int64)
    old = mappo.actor_log_probs(actor, x, mask).value[np.arange(3), acts] + 0.01
    adv = rng.normal(size=3)
    e_actor = gradcheck(lambda: mappo.ppo_actor_loss(actor, x, mask, acts, old, adv, 0.15, 0.01)[0], actor.params.values())
    s, ret = rng.random((3, mappo.N_SUMMARY)), rng.normal(size=3)
    e_critic = gradcheck(lambda: mappo.ppo_critic_loss(critic, x, s, ret), critic.params.values())
    net = make_net([(0, 1, 5.0), (1, 2, 4.0), (2, 3, 6.0)])
    adj, deg = line_graph_adjacency(net)
    ps = init_stpm(3, StpmConfig(d_model=4, heads=2, layers=1, window=4, horizon=2), seed=3)
    for p in ps.params.values():
        p.value = p.value + rng.normal(scale=0.1, size=p.shape)
    xs, ys = rng.random((2, 4, 3)), rng.random((2, 2, 3))
    e_stpm = gradcheck(lambda: stpm_loss(ps, xs, ys, adj, deg), ps.params.values())
    worst = max(e_actor, e_critic, e_stpm)
    report(5, "gradient checks", worst < 1e-4, f"actor {e_actor:.1e}, critic {e_critic:.1e}, stpm {e_stpm:.1e}")


# ------------------------------------------------------------------ 6
def test_criterion_06_stpm_skill():
    start = time.monotonic()
    family = [load_scenario("default", v) for v in (None, "higher_participation", "concentrated", "reduced_capacity")]
    ds = generate_training_data(family, 64, seeds=list(range(500, 564)))
    net = family[0].network
    res = train_stpm(ds, net, STPM_EPOCHS, lr=0.001, seed=0, batch=16, steps_per_epoch=25)
    adj, deg = line_graph_adjacency(net)
    model = model_mse(res.params, ds, adj, deg, "test", stride=4)
    base = persistence_mse_on(ds, "test", stride=4)
    elapsed = time.monotonic() - start
    ok = model <= 0.9 * base and elapsed < 600.0
    report(6, "STPM skill", ok, f"test MSE {model:.4f} vs persistence {base:.4f} (ratio {model / base:.3f}), {elapsed:.0f}s")


# ------------------------------------------------------------------ 7
def _arrival(res, node):
    for t, _k, _ph, nd, e, _cap in res.truck_log:
        if nd == node and e < 0:
            return t
    return np.inf


def test_criterion_07_predictive_routing():
    sc = load_scenario("toy")
    dry = run_episode(sc.with_fleet_size(0), HoldPolicy(), 0)
    fc = oracle_forecaster(dry.travel_times)
    station = sc.network.stations[0]
    snap = run_episode(sc, FixedTargetPolicy(0, 1), 0)
    pred = run_episode(sc, FixedTargetPolicy(0, 1), 0, router=make_router(fc))
    nr_router = make_router(fc, no_reroute=True)
    nr = run_episode(sc, FixedTargetPolicy(0, 1), 0, router=nr_router)
    t_snap, t_pred, t_nr = _arrival(snap, station), _arrival(pred, station), _arrival(nr, station)
    ok = t_pred < t_snap and isinstance(nr_router, SnapshotRouter) and nr.truck_log == snap.truck_log
    report(7, "predictive routing", ok, f"arrival predictive {t_pred:.0f} min, snapshot {t_snap:.0f} min, no-reroute {t_nr:.0f} min")


# ------------------------------------------------------------------ 8, 9
@pytest.fixture(scope="module")
def trained():
    sc = load_scenario("default")
    start = time.monotonic()
    res = mappo.train([sc], list(range(1000, 1100)), MAPPO_ITERATIONS, mappo.PPOConfig(), init_seed=0)
    return sc, res, time.monotonic() - start


def test_criterion_08_dispatch_value(trained):
    sc, res, train_s = trained
    hold = [_are(sc.with_fleet_size(0), HoldPolicy(), s) for s in EVAL_SEEDS]
    greedy = [_are(sc, GreedyPolicy(), s) for s in EVAL_SEEDS]
    # ARMD-NF: the pretrained actor, no adaptation, snapshot routes
    armd_nf = [_are(sc, adapt.ArmdPolicy(res.actor, finetune=False, stochastic=True), s) for s in EVAL_SEEDS]
    all_beat = all(g < h for g, h in zip(greedy, hold))
    ok = all_beat and np.mean(armd_nf) <= np.mean(greedy) and train_s <= 900.0
    report(
        8,
        "dispatch value",
        ok,
        f"greedy<no-mct on {sum(g < h for g, h in zip(greedy, hold))}/10 seeds; mean ARE no-mct {np.mean(hold):.5f}, "
        f"greedy {np.mean(greedy):.5f}, ARMD-NF {np.mean(armd_nf):.5f}; training {train_s:.0f}s",
    )


def test_criterion_09_finetune_safety(trained):
    sc, res, _ = trained
    bank = adapt.build_bank(res.actor, res.critic, [sc], list(range(2000, 2004)))
    pol_kls, hashes_ok, n = 0.0, True, 0
    eps = adapt.FinetuneConfig().eps_kl
    for s in (0, 1):
        pol = adapt.ArmdPolicy(res.actor, bank, stochastic=True)
        run_episode(sc, pol, s)
        n += len(pol.adaptations)
        pol_kls = max([pol_kls] + [a.mean_kl for a in pol.adaptations])
        hashes_ok &= all(h == pol.pretrained_hash for h in pol.epoch_hashes) and res.actor.digest() == pol.pretrained_hash
    ok = n > 0 and pol_kls <= eps + 1e-6 and hashes_ok
    report(9, "fine-tuning safety", ok, f"{n} adaptations, max meanKL {pol_kls:.4f} <= {eps}, epoch-start hashes equal: {hashes_ok}")


# ------------------------------------------------------------------ 10
def test_criterion_10_retrieval():
    rng = np.random.default_rng(10)
    C = rng.normal(size=(1000, 2)) * [10.0, 1.0]
    recs = [adapt.ExperienceRecord(C[i], np.zeros((3, mappo.N_FEATURES)), np.ones(3, bool), 0, 0.0, 0.0) for i in range(1000)]
    bank = adapt.ExperienceBank(recs)
    mism = 0
    for q in rng.normal(size=(100, 2)) * [10.0, 1.0]:
        mism += adapt.retrieve(bank, q, adapt.K_RET).tolist() != nearest_brute(bank.contexts, q, adapt.K_RET)
    report(10, "retrieval exactness", mism == 0, f"100 queries on 1000 records, mismatches {mism}")


# ------------------------------------------------------------------ 11
def test_criterion_11_metrics_fixtures():
    q = np.zeros((576, 1))
    r = np.zeros((576, 1))
    q[-144:], r[-144:] = 2.0, 0.5
    m = risk_metrics(q, r, 4)
    z = risk_metrics(np.zeros((10, 2)), np.ones((10, 2)), 3)
    afd = afd_report([3.0, 5.0], [4.0, 4.0])
    checks = [
        (m.psre, 1.0),
        (m.asre_l, 1.0),
        (m.are, 3.0),
        (z.are + z.psre + z.asre_l, 0.0),
        (afd.per_station[0], 1.0),
        (gini([0.0, 0.0, 3.0]), 2.0 / 3.0),
        (gini([4.0, 4.0]), 0.0),
        (afd_report(np.ones((3, 2)), np.ones((3, 2))).gini, 0.0),
    ]
    worst = max(abs(a - b) for a, b in checks)
    report(11, "metrics arithmetic", worst <= 1e-12, f"{len(checks)} fixtures, max abs err {worst:.1e}")


# ------------------------------------------------------------------ 12
def test_criterion_12_determinism(tmp_path):
    runs = [
        ["simulate", "--scenario", "default", "--policy", "greedy", "--seeds", "4"],
        ["evaluate", "--scenario", "tiny", "--policies", "no-mct", "greedy", "--seeds", "0", "1", "--trace-dir"],
        ["afd-report", "--scenario", "tiny", "--seeds", "2", "--profile-runs", "2"],
    ]
    diffs, files = 0, 0
    for i, argv in enumerate(runs):
        outs = []
        for rep in ("a", "b"):
            d = tmp_path / f"{i}{rep}"
            if argv[0] == "evaluate":
                args = argv + [str(d / "traces"), "--out", str(d / "summary.csv")]
            else:
                args = argv + ["--out", str(d)]
            assert cli.main(args) == 0
            outs.append({p.relative_to(d): p.read_bytes() for p in sorted(d.rglob("*.csv"))})
        files += len(outs[0])
        diffs += outs[0] != outs[1]
    report(12, "determinism", diffs == 0 and files > 0, f"{len(runs)} commands, {files} CSV files compared, differing runs {diffs}")


# ------------------------------------------------------------------ 13
def test_criterion_13_fleet_trend():
    start = time.monotonic()
    sc = load_scenario("default")
    stats = {}
    for fleet in (0, 2, 4):
        s = sc.with_fleet_size(fleet)
        stats[fleet] = summarize([_are(s, GreedyPolicy(), seed) for seed in EVAL_SEEDS])
    ok = True
    for a, b in ((0, 2), (2, 4)):
        se = max(stats[a][1], stats[b][1])
        ok &= stats[b][0] <= stats[a][0] + se
    elapsed = time.monotonic() - start
    ok &= elapsed < 300.0
    detail = ", ".join(f"fleet {f}: {m:.5f} +/- {e:.5f}" for f, (m, e) in stats.items())
    report(13, "fleet-size trend", ok, f"{detail}; {elapsed:.0f}s")
