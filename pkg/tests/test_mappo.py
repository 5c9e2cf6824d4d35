from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import evacharge.autodiff as ad
from evacharge import mappo
from evacharge.autodiff import Tensor, gradcheck
from evacharge.scenario import load_scenario
from evacharge.simulator import Simulation, run_episode
from oracles import critic_scalar, mlp_tanh_scalar


def _features(rng, F):
    return np.abs(rng.normal(size=(F, mappo.N_FEATURES))) * 0.5


def test_embed_zero_weights_and_purity():
    ps = mappo.init_actor(0, d_model=8)
    for n in ("enc.emb_w1", "enc.emb_w2"):
        ps[n].value[:] = 0.0
    assert np.array_equal(mappo.embed_station(ps, np.ones((3, 7))).value, np.zeros((3, 8)))
    ps = mappo.init_actor(1, d_model=8)
    e = mappo.embed_station(ps, np.tile(np.arange(7.0), (2, 1))).value
    assert np.array_equal(e[0], e[1])


def test_embed_matches_scalar_oracle():
    ps = mappo.init_actor(2, d_model=8)
    rng = np.random.default_rng(2)
    ps["enc.emb_b1"].value[:] = rng.normal(size=8)
    x = rng.normal(size=7)
    got = mappo.embed_station(ps, x[None]).value[0]
    v = {k: t.value.tolist() for k, t in ps.params.items()}
    ref = mlp_tanh_scalar(x.tolist(), [(v["enc.emb_w1"], v["enc.emb_b1"]), (v["enc.emb_w2"], v["enc.emb_b2"])])
    assert np.allclose(got, ref, atol=1e-14, rtol=0)


def test_actor_examples():
    ps = mappo.init_actor(0)
    rng = np.random.default_rng(0)
    x = _features(rng, 4)
    p = mappo.actor_forward(ps, x, np.array([False, True, False, False]))
    assert p.tolist() == [0.0, 1.0, 0.0, 0.0]
    x[2] = x[0]
    p = mappo.actor_forward(ps, x, np.array([True, False, True, False]))
    assert p[0] == pytest.approx(0.5, abs=1e-14) and p[2] == pytest.approx(0.5, abs=1e-14)
    with pytest.raises(ValueError):
        mappo.actor_forward(ps, x, np.zeros(4, dtype=bool))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 7))
def test_actor_equivariant_critic_invariant(seed, F):
    rng = np.random.default_rng(seed)
    actor, critic = mappo.init_actor(seed % 97, d_model=16), mappo.init_critic(seed % 89, d_model=16)
    x = _features(rng, F)
    mask = rng.random(F) < 0.7
    mask[0] = True
    perm = rng.permutation(F)
    p = mappo.actor_forward(actor, x, mask)
    pp = mappo.actor_forward(actor, x[perm], mask[perm])
    assert np.allclose(pp, p[perm], atol=1e-12)
    assert np.allclose(p.sum(), 1.0, atol=1e-12)
    assert (p[~mask] == 0).all()
    s = rng.random(3)
    assert mappo.critic_forward(critic, x, s) == pytest.approx(mappo.critic_forward(critic, x[perm], s), abs=1e-12)


def test_masked_stations_get_zero_gradient():
    ps = mappo.init_actor(0, d_model=8)
    x = Tensor(_features(np.random.default_rng(0), 4), requires_grad=True)
    mask = np.array([[True, False, True, True]])
    lp = mappo.actor_log_probs(ps, x.value[None], mask)
    logits = mappo.actor_logits(ps, x.value[None], mask)
    logits_t = Tensor(logits.value, requires_grad=True)
    out = ad.sum_(ad.mul(ad.masked_log_softmax(logits_t, mask), np.arange(4.0)))
    out.backward()
    assert logits_t.grad[0, 1] == 0.0
    assert lp.value[0, 1] == 0.0


def test_critic_examples():
    ps = mappo.init_critic(0, d_model=8)
    rng = np.random.default_rng(4)
    x, s = _features(rng, 3), rng.random(3)
    ref = critic_scalar(ps.values(), x.tolist(), s.tolist(), heads=2)
    assert mappo.critic_forward(ps, x, s) == pytest.approx(ref, abs=1e-13)
    ps["v2.w"].value[:] = 0.0
    assert mappo.critic_forward(ps, x, s) == 0.0


def test_gae_examples():
    adv, ret = mappo.gae([0, 0, 0], [0, 0, 0], normalize=False)
    assert adv.tolist() == [0, 0, 0]
    adv, _ = mappo.gae([1.0, -2.0, 3.0], [0.5, 0.1, -0.2], gamma=0.0, lam=0.7, normalize=False)
    assert np.allclose(adv, [0.5, -2.1, 3.2], atol=1e-15)
    # hand-unrolled: g=0.9, l=0.5
    r, v = [1.0, 2.0, -1.0], [0.5, 0.2, 0.3]
    d2 = -1.0 - 0.3
    d1 = 2.0 + 0.9 * 0.3 - 0.2
    d0 = 1.0 + 0.9 * 0.2 - 0.5
    a2 = d2
    a1 = d1 + 0.45 * a2
    a0 = d0 + 0.45 * a1
    adv, ret = mappo.gae(r, v, 0.9, 0.5, normalize=False)
    assert np.allclose(adv, [a0, a1, a2], atol=1e-15)
    assert np.allclose(ret, np.array([a0, a1, a2]) + v, atol=1e-15)
    norm, _ = mappo.gae(r, v, 0.9, 0.5)
    assert abs(norm.mean()) < 1e-12 and norm.std() == pytest.approx(1.0, abs=1e-12)


def test_ppo_loss_examples():
    ps = mappo.init_actor(0, d_model=8)
    rng = np.random.default_rng(0)
    x = np.stack([_features(rng, 3) for _ in range(4)])
    mask = np.ones((4, 3), dtype=bool)
    acts = np.array([0, 1, 2, 0])
    lp = mappo.actor_log_probs(ps, x, mask).value[np.arange(4), acts]
    loss, _ = mappo.ppo_actor_loss(ps, x, mask, acts, lp, np.zeros(4), 0.15, 0.0)
    assert loss.value == 0.0
    # ratio 1.5 with positive advantage: clipped to 1.15
    loss, _ = mappo.ppo_actor_loss(ps, x[:1], mask[:1], acts[:1], lp[:1] - np.log(1.5), np.ones(1), 0.15, 0.0)
    assert float(loss.value) == pytest.approx(-1.15, abs=1e-12)


def _toy_batch(seed=0):
    sc = load_scenario("tiny")
    actor = mappo.init_actor(seed)
    critic = mappo.init_critic(seed)
    batch = mappo.Rollout()
    mappo.collect(actor, sc, 5, batch, 0)
    return actor, critic, batch


def test_ppo_update_small_kl_and_shared_reward():
    actor, critic, batch = _toy_batch()
    cfg = mappo.PPOConfig()
    CX, CS, CR, _ = mappo.assign_advantages(batch, critic, cfg)
    by_epoch: dict[int, set] = {}
    for t in batch.transitions:
        by_epoch.setdefault(t.epoch, set()).add(t.reward)
    assert all(len(v) == 1 for v in by_epoch.values())
    X = np.stack([t.x for t in batch.transitions])
    M = np.stack([t.mask for t in batch.transitions])
    before = mappo.actor_forward(actor, X, M)
    mappo.ppo_update(actor, critic, batch, cfg, np.random.default_rng(0), (CX, CS, CR))
    after = mappo.actor_forward(actor, X, M)
    kl = mappo.mean_kl(before, after, M)
    assert np.isfinite(kl) and 0.0 <= kl < 0.1


def test_augmented_epochs_use_full_station_set():
    sc = load_scenario("default")
    sim = Simulation(sc, 0)
    for k in range(sc.fleet.trucks):
        for m in (0, 3, 6):
            assert len(sim.observe(k, m).candidates) == sc.network.n_stations


def test_zero_iterations_returns_init():
    sc = load_scenario("tiny")
    res = mappo.train([sc], [0], 0, init_seed=3)
    assert res.actor.digest() == mappo.init_actor(3).digest()
    assert res.critic.digest() == mappo.init_critic(3).digest()


def test_actor_critic_gradcheck():
    rng = np.random.default_rng(5)
    actor, critic = mappo.init_actor(5, d_model=8), mappo.init_critic(5, d_model=8)
    x = np.stack([_features(rng, 4) for _ in range(3)])
    mask = rng.random((3, 4)) < 0.8
    mask[:, 0] = True
    acts = np.array([0, 0, 0])
    old = mappo.actor_log_probs(actor, x, mask).value[np.arange(3), acts] + 0.01
    adv = rng.normal(size=3)

    def aloss():
        return mappo.ppo_actor_loss(actor, x, mask, acts, old, adv, 0.15, 0.01)[0]

    assert gradcheck(aloss, actor.params.values()) < 1e-4
    s, ret = rng.random((3, 3)), rng.normal(size=3)
    assert gradcheck(lambda: mappo.ppo_critic_loss(critic, x, s, ret), critic.params.values()) < 1e-4


def test_ca_examples():
    rng = np.random.default_rng(0)
    F = 4
    x = _features(rng, F)
    ps1 = mappo.init_ca(1, 0, d_model=8)
    tf1 = rng.random((1, F, 2))
    p1 = mappo.ca_forward(ps1, x, tf1, np.ones((1, F), dtype=bool))
    assert p1.shape == (1, F) and p1.sum() == pytest.approx(1.0, abs=1e-12)
    ps = mappo.init_ca(2, 0, d_model=8)
    tf = np.repeat(tf1, 2, axis=0)
    p = mappo.ca_forward(ps, x, tf, np.ones((2, F), dtype=bool))
    assert np.array_equal(p[0], p[1])
    tf = rng.random((2, F, 2))
    masks = np.ones((2, F), dtype=bool)
    tr = mappo.JointTransition(0, 0, x, tf, masks, np.array([True, True]), np.array([1, 3]), 0.0)
    lp = mappo.ca_log_probs(ps, x, tf, masks).value
    assert float(mappo.ca_joint_log_prob(ps, tr).value) == pytest.approx(lp[0, 1] + lp[1, 3], abs=1e-14)


def _team_return(actor, sc, seeds):
    return float(np.mean([run_episode(sc, mappo.ActorPolicy(actor, True), s).epoch_rewards.sum() for s in seeds]))


@pytest.mark.slow
def test_training_improves_on_tiny():
    sc = load_scenario("tiny")
    cfg = mappo.PPOConfig(episodes_per_iter=1)
    res = mappo.train([sc], list(range(100, 120)), 200, cfg)
    # same held-out seeds and the same sampling streams for both actors
    seeds = range(100, 120)
    init = mappo.init_actor(0, cfg.d_model, cfg.heads)
    assert _team_return(res.actor, sc, seeds) > _team_return(init, sc, seeds)
