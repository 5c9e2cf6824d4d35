"""Shared relational-attention actor, centralized critic and PPO training.

Observations are laid out over the full station set: candidate stations carry
their features and a True mask entry, everything else is masked.  This keeps
batches rectangular and makes the set-size switch of observation augmentation
a mask change only.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .scenario import Scenario
from .simulator import IDLE, SERVING, EpisodeResult, Observation, Simulation, run_episode

N_FEATURES = 7
N_SUMMARY = 3
Q_SCALE, M_SCALE, L_SCALE, U_SCALE, H_SCALE = 50.0, 10.0, 120.0, 3000.0, 48.0


@dataclass
class PPOConfig:
    d_model: int = 64
    heads: int = 2
    gamma: float = 0.99
    lam: float = 0.95
    lr: float = 0.005
    critic_lr: float = 0.005
    clip: float = 0.15
    entropy_coef: float = 0.01
    passes: int = 4
    minibatch: int = 64
    episodes_per_iter: int = 2
    reward_scale: float = 1.0
    max_grad_norm: float = 1.0
    target_kl: float | None = 0.02


# ------------------------------------------------------------------ features
def obs_features(obs: Observation, n_stations: int, fleet_size: int) -> tuple[np.ndarray, np.ndarray]:
    """(F, 7) normalized features over the full station set plus the action mask."""
    x = np.zeros((n_stations, N_FEATURES))
    mask = np.zeros(n_stations, dtype=bool)
    c = obs.candidates
    reach = np.isfinite(obs.travel_min)
    x[c, 0] = obs.queue / Q_SCALE
    x[c, 1] = obs.risk
    x[c, 2] = obs.chargers / M_SCALE
    x[c, 3] = obs.serving / max(fleet_size, 1)
    x[c, 4] = np.where(reach, obs.travel_min, 0.0) / L_SCALE
    x[c, 5] = obs.capability_kwh / U_SCALE
    x[c, 6] = obs.hazard_h / H_SCALE
    mask[c] = reach
    return x, mask


def global_state(sim: Simulation, m: int) -> tuple[np.ndarray, np.ndarray]:
    """Critic input: per-station features over all stations and a truck summary."""
    F = len(sim.stations)
    K = len(sim.trucks)
    t_h = m * sim.epochs.epoch_h
    risk = sim.station_risk(t_h)
    x = np.zeros((F, N_FEATURES))
    x[:, 0] = [st.Q / Q_SCALE for st in sim.stations]
    x[:, 1] = risk
    x[:, 2] = [st.chargers / M_SCALE for st in sim.stations]
    x[:, 3] = [st.c / max(K, 1) for st in sim.stations]
    if K:
        L = np.stack([sim.truck_travel_times(tr) for tr in sim.trucks])
        L = np.where(np.isfinite(L), L, np.nan)
        with np.errstate(all="ignore"):
            best = np.nanmin(np.where(np.isnan(L), np.inf, L), axis=0)
        x[:, 4] = np.where(np.isfinite(best), best, 0.0) / L_SCALE
        x[:, 5] = np.mean([tr.capability_kwh for tr in sim.trucks]) / U_SCALE
    x[:, 6] = sim.hazard.global_hazard(t_h) / H_SCALE
    summary = np.zeros(N_SUMMARY)
    if K:
        summary[0] = np.mean([tr.capability_kwh for tr in sim.trucks]) / U_SCALE
        summary[1] = np.mean([tr.phase == IDLE for tr in sim.trucks])
        summary[2] = np.mean([tr.phase == SERVING for tr in sim.trucks])
    return x, summary


# ---------------------------------------------------------------- networks
def init_encoder(ps: ParamStore, prefix: str, d: int) -> None:
    ps.glorot(f"{prefix}.emb_w1", (N_FEATURES, d))
    ps.zeros(f"{prefix}.emb_b1", (d,))
    ps.glorot(f"{prefix}.emb_w2", (d, d))
    ps.zeros(f"{prefix}.emb_b2", (d,))
    for w in ("wq", "wk", "wv", "wo"):
        ps.glorot(f"{prefix}.{w}", (d, d))


def init_actor(seed: int = 0, d_model: int = 64, heads: int = 2) -> ParamStore:
    ps = ParamStore(f"glorot-uniform seed={seed} d={d_model} heads={heads}", seed=seed)
    init_encoder(ps, "enc", d_model)
    ps.glorot("head.w", (d_model, 1), gain=0.1)
    ps.zeros("head.b", (1,))
    return ps


def init_critic(seed: int = 0, d_model: int = 64, heads: int = 2) -> ParamStore:
    ps = ParamStore(f"glorot-uniform seed={seed} d={d_model} heads={heads}", seed=seed + 7919)
    init_encoder(ps, "enc", d_model)
    ps.glorot("v1.w", (d_model + N_SUMMARY, d_model))
    ps.zeros("v1.b", (d_model,))
    ps.glorot("v2.w", (d_model, 1))
    ps.zeros("v2.b", (1,))
    return ps


def _heads_of(ps: ParamStore) -> int:
    for part in ps.init.split():
        if part.startswith("heads="):
            return int(part.split("=")[1])
    return 2


def embed_station(ps: ParamStore, x, prefix: str = "enc") -> Tensor:
    """Two tanh layers mapping station features (..., 7) to (..., d)."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    h = ad.tanh(ad.linear(x, ps[f"{prefix}.emb_w1"], ps[f"{prefix}.emb_b1"]))
    return ad.tanh(ad.linear(h, ps[f"{prefix}.emb_w2"], ps[f"{prefix}.emb_b2"]))


def encode(ps: ParamStore, x: np.ndarray, mask: np.ndarray, prefix: str = "enc") -> Tensor:
    """Embedding plus one residual attention block over stations; x is (B, F, 7)."""
    e = embed_station(ps, x, prefix)
    a = ad.mha_forward(e, e, ps[f"{prefix}.wq"], ps[f"{prefix}.wk"], ps[f"{prefix}.wv"], ps[f"{prefix}.wo"], _heads_of(ps), mask)
    return ad.add(e, a)


def actor_logits(ps: ParamStore, x: np.ndarray, mask: np.ndarray) -> Tensor:
    z = encode(ps, x, mask)
    B, F, _ = z.shape
    return ad.reshape(ad.linear(z, ps["head.w"], ps["head.b"]), (B, F))


def actor_log_probs(ps: ParamStore, x: np.ndarray, mask: np.ndarray) -> Tensor:
    """(B, F) log-probabilities; masked stations carry 0 here and probability 0."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=-1).all():
        raise ValueError("every candidate station is unreachable")
    return ad.masked_log_softmax(actor_logits(ps, x, mask), mask)


def actor_forward(ps: ParamStore, x: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Probabilities for a single (F, 7) observation or a (B, F, 7) batch."""
    single = np.ndim(x) == 2
    xb = np.asarray(x)[None] if single else np.asarray(x)
    mb = np.asarray(mask, dtype=bool)[None] if single else np.asarray(mask, dtype=bool)
    lp = actor_log_probs(ps, xb, mb).value
    p = np.where(mb, np.exp(lp), 0.0)
    return p[0] if single else p


def critic_value(ps: ParamStore, x: np.ndarray, summary: np.ndarray) -> Tensor:
    """(B,) values from (B, F, 7) station features and (B, 3) truck summaries."""
    B, F, _ = x.shape
    mask = np.ones((B, F), dtype=bool)
    z = encode(ps, x, mask)
    pooled = ad.mean(z, axis=1)
    h = ad.concat([pooled, Tensor(summary)], axis=-1)
    h = ad.tanh(ad.linear(h, ps["v1.w"], ps["v1.b"]))
    return ad.reshape(ad.linear(h, ps["v2.w"], ps["v2.b"]), (B,))


def critic_forward(ps: ParamStore, x: np.ndarray, summary: np.ndarray) -> float:
    return float(critic_value(ps, np.asarray(x)[None], np.asarray(summary)[None]).value[0])


# ----------------------------------------------------------------- advantage
def gae(rewards: Sequence[float], values: Sequence[float], gamma: float = 0.99, lam: float = 0.95, normalize: bool = True):
    """Generalized advantage estimation with a terminal bootstrap of 0.

    Returns (advantages, returns); returns use the raw advantages, the
    advantages themselves are standardized when ``normalize`` is set.
    """
    r = np.asarray(rewards, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    adv = np.zeros_like(r)
    nxt = 0.0
    run = 0.0
    for t in range(len(r) - 1, -1, -1):
        delta = r[t] + gamma * nxt - v[t]
        run = delta + gamma * lam * run
        adv[t] = run
        nxt = v[t]
    ret = adv + v
    if normalize:
        adv = normalize_advantages(adv)
    return adv, ret


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    adv = np.asarray(adv, dtype=np.float64)
    if adv.size < 2:
        return adv - adv.mean() if adv.size else adv
    sd = adv.std()
    return (adv - adv.mean()) / (sd if sd > 1e-12 else 1.0)


# ------------------------------------------------------------------- rollout
@dataclass
class Transition:
    episode: int
    epoch: int
    agent: int
    x: np.ndarray
    mask: np.ndarray
    action: int
    logp: float
    reward: float = 0.0
    advantage: float = 0.0
    ret: float = 0.0
    context: np.ndarray | None = None


@dataclass
class Rollout:
    transitions: list[Transition] = field(default_factory=list)
    states: list[tuple[int, int, np.ndarray, np.ndarray]] = field(default_factory=list)
    results: list[EpisodeResult] = field(default_factory=list)


class ActorPolicy:
    """Shared actor acting for each idle truck from its own observation."""

    name = "mappo"

    def __init__(self, actor: ParamStore, stochastic: bool = True, record: Rollout | None = None, episode: int = 0):
        self.actor = actor
        self.stochastic = stochastic
        self.record = record
        self.episode = episode
        self.rng: np.random.Generator | None = None

    def reset(self, sim: Simulation) -> None:
        self.rng = sim.rng["policy"]

    def probabilities(self, sim: Simulation, observations: list[Observation]):
        F, K = len(sim.stations), len(sim.trucks)
        feats = [obs_features(o, F, K) for o in observations]
        x = np.stack([f[0] for f in feats])
        mask = np.stack([f[1] for f in feats])
        ok = mask.any(axis=1)
        lp = np.zeros(mask.shape)
        if ok.any():
            lp[ok] = actor_log_probs(self.actor, x[ok], mask[ok]).value
        return x, mask, ok, lp

    def act(self, sim: Simulation, observations: list[Observation]) -> list[int | None]:
        x, mask, ok, lp = self.probabilities(sim, observations)
        out: list[int | None] = []
        for j, o in enumerate(observations):
            if not ok[j]:
                out.append(None)
                continue
            p = np.where(mask[j], np.exp(lp[j]), 0.0)
            if self.stochastic:
                a = int(self.rng.choice(len(p), p=p / p.sum()))
            else:
                a = int(np.argmax(np.where(mask[j], lp[j], -np.inf)))
            out.append(a)
            if self.record is not None:
                from .adapt import context_descriptor

                self.record.transitions.append(
                    Transition(self.episode, o.epoch, o.truck, x[j], mask[j], a, float(lp[j, a]), context=context_descriptor(o))
                )
        return out


def collect(
    actor: ParamStore,
    scenario: Scenario,
    seed: int,
    rollout: Rollout,
    episode: int,
    stochastic: bool = True,
    policy_factory: Callable | None = None,
) -> EpisodeResult:
    pol = policy_factory(rollout, episode) if policy_factory else ActorPolicy(actor, stochastic, rollout, episode)

    def hook(sim: Simulation, m: int) -> None:
        x, s = global_state(sim, m)
        rollout.states.append((episode, m, x, s))

    res = run_episode(scenario, pol, seed, on_epoch=hook)
    rollout.results.append(res)
    return res


def assign_advantages(rollout: Rollout, critic: ParamStore, cfg: PPOConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Team-level GAE over each episode's epochs; fills transitions and returns critic targets."""
    by_ep: dict[int, list] = {}
    for ep, m, x, s in rollout.states:
        by_ep.setdefault(ep, []).append((m, x, s))
    xs, ss, rets, advs_all = [], [], [], []
    table: dict[tuple[int, int], tuple[float, float, float]] = {}
    for k, (ep, states) in enumerate(sorted(by_ep.items())):
        res = rollout.results[k]
        states.sort(key=lambda t: t[0])
        X = np.stack([t[1] for t in states])
        S = np.stack([t[2] for t in states])
        v = critic_value(critic, X, S).value
        r = res.epoch_rewards[: len(states)] * cfg.reward_scale
        adv, ret = gae(r, v, cfg.gamma, cfg.lam, normalize=False)
        for (m, _, _), a_, r_, rt in zip(states, adv, r, ret):
            table[(ep, m)] = (a_, r_, rt)
        xs.append(X)
        ss.append(S)
        rets.append(ret)
        advs_all.append(adv)
    for tr in rollout.transitions:
        a_, r_, rt = table[(tr.episode, tr.epoch)]
        tr.advantage, tr.reward, tr.ret = a_, r_, rt
    if rollout.transitions:
        norm = normalize_advantages(np.array([t.advantage for t in rollout.transitions]))
        for t, a_ in zip(rollout.transitions, norm):
            t.advantage = float(a_)
    return np.concatenate(xs), np.concatenate(ss), np.concatenate(rets), np.concatenate(advs_all)


# ---------------------------------------------------------------------- PPO
def ppo_actor_loss(actor: ParamStore, x, mask, actions, old_logp, adv, clip: float, entropy_coef: float) -> tuple[Tensor, float]:
    lp = actor_log_probs(actor, x, mask)
    lp_a = ad.gather_last(lp, actions)
    ratio = ad.exp(ad.add(lp_a, -np.asarray(old_logp)))
    adv = np.asarray(adv, dtype=np.float64)
    surr = ad.minimum(ad.mul(ratio, adv), ad.mul(ad.clip(ratio, 1.0 - clip, 1.0 + clip), adv))
    probs = ad.exp(lp)
    ent = ad.neg(ad.sum_(ad.mul(ad.mul(probs, lp), np.asarray(mask, dtype=np.float64)), axis=1))
    loss = ad.neg(ad.add(ad.mean(surr), ad.scale(ad.mean(ent), entropy_coef)))
    return loss, float(ent.value.mean())


def ppo_critic_loss(critic: ParamStore, x, summary, returns) -> Tensor:
    v = critic_value(critic, x, summary)
    return ad.mean(ad.square(ad.add(v, -np.asarray(returns))))


def ppo_update(actor: ParamStore, critic: ParamStore, batch: Rollout, cfg: PPOConfig, rng: np.random.Generator, critic_data=None) -> dict[str, float]:
    """Clipped-surrogate actor passes and value regression; returns mean losses."""
    trs = batch.transitions
    stats = {"actor_loss": 0.0, "critic_loss": 0.0, "entropy": 0.0}
    n_a = n_c = 0
    if trs:
        X = np.stack([t.x for t in trs])
        M = np.stack([t.mask for t in trs])
        A = np.array([t.action for t in trs])
        LP = np.array([t.logp for t in trs])
        ADV = np.array([t.advantage for t in trs])
        old_p = np.where(M, np.exp(actor_log_probs(actor, X, M).value), 0.0) if cfg.target_kl is not None else None
        for _ in range(cfg.passes):
            order = rng.permutation(len(trs))
            for s in range(0, len(trs), cfg.minibatch):
                idx = order[s : s + cfg.minibatch]
                actor.zero_grad()
                loss, ent = ppo_actor_loss(actor, X[idx], M[idx], A[idx], LP[idx], ADV[idx], cfg.clip, cfg.entropy_coef)
                loss.backward()
                actor.adam_step(cfg.lr, max_norm=cfg.max_grad_norm)
                stats["actor_loss"] += float(loss.value)
                stats["entropy"] += ent
                n_a += 1
            if old_p is not None:
                # stop this iteration's passes once the policy has moved far enough
                new_p = np.where(M, np.exp(actor_log_probs(actor, X, M).value), 0.0)
                stats["kl"] = mean_kl(old_p, new_p, M)
                if stats["kl"] > cfg.target_kl:
                    break
    if critic_data is not None:
        CX, CS, CR = critic_data
        for _ in range(cfg.passes):
            order = rng.permutation(len(CR))
            for s in range(0, len(CR), cfg.minibatch):
                idx = order[s : s + cfg.minibatch]
                critic.zero_grad()
                loss = ppo_critic_loss(critic, CX[idx], CS[idx], CR[idx])
                loss.backward()
                critic.adam_step(cfg.critic_lr, max_norm=cfg.max_grad_norm)
                stats["critic_loss"] += float(loss.value)
                n_c += 1
    if n_a:
        stats["actor_loss"] /= n_a
        stats["entropy"] /= n_a
    if n_c:
        stats["critic_loss"] /= n_c
    return stats


def mean_kl(p_old: np.ndarray, p_new: np.ndarray, mask: np.ndarray) -> float:
    """Mean over rows of KL(p_old || p_new) restricted to masked-in entries."""
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(mask & (p_old > 0), p_old * (np.log(p_old) - np.log(p_new)), 0.0)
    return float(t.sum(axis=1).mean())


# ------------------------------------------------------------------ training
@dataclass
class TrainResult:
    actor: ParamStore
    critic: ParamStore
    log: list[dict]
    best_iteration: int = -1


def train(
    scenarios: Sequence[Scenario],
    seeds: Sequence[int],
    iterations: int,
    cfg: PPOConfig | None = None,
    init_seed: int = 0,
    time_budget_s: float | None = None,
    eval_fn: Callable[[ParamStore], float] | None = None,
    eval_every: int = 0,
    log_fn: Callable[[dict], None] | None = None,
    actor: ParamStore | None = None,
    critic: ParamStore | None = None,
) -> TrainResult:
    """PPO over a scenario family with a shared actor.

    Each iteration rolls ``episodes_per_iter`` stochastic episodes (scenario
    and seed drawn round-robin), computes team GAE, and updates actor and
    critic.  With ``eval_fn`` (lower is better) the best evaluated actor is
    returned instead of the last one.
    """
    cfg = cfg or PPOConfig()
    actor = actor or init_actor(init_seed, cfg.d_model, cfg.heads)
    critic = critic or init_critic(init_seed, cfg.d_model, cfg.heads)
    rng = np.random.default_rng([init_seed, 99])
    log: list[dict] = []
    best = (np.inf, -1, None)
    start = time.monotonic()
    k = 0
    for it in range(iterations):
        if time_budget_s is not None and time.monotonic() - start > time_budget_s:
            break
        batch = Rollout()
        for e in range(cfg.episodes_per_iter):
            sc = scenarios[k % len(scenarios)]
            sd = seeds[(k // len(scenarios)) % len(seeds)]
            k += 1
            collect(actor, sc, sd, batch, e)
        CX, CS, CR, _ = assign_advantages(batch, critic, cfg)
        stats = ppo_update(actor, critic, batch, cfg, rng, (CX, CS, CR))
        row = {
            "iteration": it,
            "mean_return": float(np.mean([r.epoch_rewards.sum() for r in batch.results])),
            **stats,
            "elapsed_s": time.monotonic() - start,
        }
        if eval_fn is not None and eval_every and (it + 1) % eval_every == 0:
            score = eval_fn(actor)
            row["eval"] = score
            if score <= best[0]:
                best = (score, it, actor.copy())
        log.append(row)
        if log_fn:
            log_fn(row)
    best_it = -1
    if best[2] is not None:
        actor, best_it = best[2], best[1]
    return TrainResult(actor, critic, log, best_it)


# ----------------------------------------------------- centralized variant
def init_ca(fleet_size: int, seed: int = 0, d_model: int = 64, heads: int = 2) -> ParamStore:
    ps = ParamStore(f"glorot-uniform seed={seed} d={d_model} heads={heads} fleet={fleet_size}", seed=seed + 104729)
    init_encoder(ps, "enc", d_model)
    ps.glorot("ctx.w", (2 * fleet_size if fleet_size else 1, d_model))
    ps.zeros("ctx.b", (d_model,))
    ps.glorot("truck.w", (2, d_model))
    ps.glorot("head.w1", (d_model, d_model))
    ps.zeros("head.b1", (d_model,))
    ps.glorot("head.w2", (d_model, 1), gain=0.1)
    ps.zeros("head.b2", (1,))
    return ps


def ca_log_probs(ps: ParamStore, x: np.ndarray, truck_feats: np.ndarray, masks: np.ndarray) -> Tensor:
    """Per-truck log-probabilities (K, F) from shared station features x (F, 7).

    ``truck_feats`` is (K, F, 2): travel time and capability per truck and
    station; ``masks`` is (K, F).
    """
    K, F, _ = truck_feats.shape
    z = encode(ps, np.asarray(x)[None], np.ones((1, F), dtype=bool))  # 1,F,d
    flat = truck_feats[:, 0, :].reshape(1, -1)  # capability and first travel time per truck
    ctx = ad.tanh(ad.linear(Tensor(flat), ps["ctx.w"], ps["ctx.b"]))  # 1,d
    tk = ad.linear(Tensor(truck_feats), ps["truck.w"])  # K,F,d
    h = ad.add(ad.add(tk, z), ad.reshape(ctx, (1, 1, -1)))
    h = ad.tanh(ad.linear(h, ps["head.w1"], ps["head.b1"]))
    logits = ad.reshape(ad.linear(h, ps["head.w2"], ps["head.b2"]), (K, F))
    return ad.masked_log_softmax(logits, masks)


def ca_inputs(sim: Simulation, m: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    x, _ = global_state(sim, m)
    F = len(sim.stations)
    K = len(sim.trucks)
    tf = np.zeros((K, F, 2))
    masks = np.zeros((K, F), dtype=bool)
    for k, tr in enumerate(sim.trucks):
        L = sim.truck_travel_times(tr)
        reach = np.isfinite(L)
        tf[k, :, 0] = np.where(reach, L, 0.0) / L_SCALE
        tf[k, :, 1] = tr.capability_kwh / U_SCALE
        masks[k] = reach
    return x, tf, masks


def ca_forward(ps: ParamStore, x, truck_feats, masks) -> np.ndarray:
    """(K, F) per-truck probabilities."""
    masks = np.asarray(masks, dtype=bool)
    lp = ca_log_probs(ps, x, truck_feats, masks).value
    return np.where(masks, np.exp(lp), 0.0)


@dataclass
class JointTransition:
    episode: int
    epoch: int
    x: np.ndarray
    truck_feats: np.ndarray
    masks: np.ndarray
    acting: np.ndarray
    actions: np.ndarray
    logp: float
    advantage: float = 0.0


class CentralPolicy:
    """One policy choosing every idle truck's station from the global state."""

    name = "ca"

    def __init__(self, params: ParamStore, stochastic: bool = True, record: list | None = None, episode: int = 0):
        self.params = params
        self.stochastic = stochastic
        self.record = record
        self.episode = episode
        self.rng = None

    def reset(self, sim: Simulation) -> None:
        self.rng = sim.rng["policy"]

    def act(self, sim: Simulation, observations: list[Observation]) -> list[int | None]:
        m = observations[0].epoch
        x, tf, masks = ca_inputs(sim, m)
        K, F = masks.shape
        ok = masks.any(axis=1)
        safe_masks = masks.copy()
        safe_masks[~ok] = True
        lp = ca_log_probs(self.params, x, tf, safe_masks).value
        acting = np.zeros(K, dtype=bool)
        actions = np.zeros(K, dtype=np.int64)
        out: list[int | None] = []
        for o in observations:
            k = o.truck
            if not ok[k]:
                out.append(None)
                continue
            p = np.where(masks[k], np.exp(lp[k]), 0.0)
            a = int(self.rng.choice(F, p=p / p.sum())) if self.stochastic else int(np.argmax(np.where(masks[k], lp[k], -np.inf)))
            acting[k] = True
            actions[k] = a
            out.append(a)
        if self.record is not None and acting.any():
            joint = float(lp[acting, actions[acting]].sum())
            self.record.append(JointTransition(self.episode, m, x, tf, safe_masks, acting, actions, joint))
        return out


def ca_joint_log_prob(ps: ParamStore, tr: JointTransition) -> Tensor:
    lp = ca_log_probs(ps, tr.x, tr.truck_feats, tr.masks)
    rows = np.flatnonzero(tr.acting)
    picked = ad.gather_last(ad.take(lp, rows, axis=0), tr.actions[rows])
    return ad.sum_(picked)


def train_ca(
    scenario: Scenario,
    seeds: Sequence[int],
    iterations: int,
    cfg: PPOConfig | None = None,
    init_seed: int = 0,
    time_budget_s: float | None = None,
) -> TrainResult:
    """PPO for the centralized variant; the parameter set is tied to the fleet size."""
    cfg = cfg or PPOConfig()
    ps = init_ca(scenario.fleet.trucks, init_seed, cfg.d_model, cfg.heads)
    critic = init_critic(init_seed, cfg.d_model, cfg.heads)
    rng = np.random.default_rng([init_seed, 98])
    log: list[dict] = []
    start = time.monotonic()
    k = 0
    for it in range(iterations):
        if time_budget_s is not None and time.monotonic() - start > time_budget_s:
            break
        batch = Rollout()
        joint: list[JointTransition] = []
        for e in range(cfg.episodes_per_iter):
            sd = seeds[k % len(seeds)]
            k += 1
            collect(ps, scenario, sd, batch, e, policy_factory=lambda _r, ep: CentralPolicy(ps, True, joint, ep))
        # the shared GAE helper keys advantages by (episode, epoch)
        batch.transitions = [Transition(t.episode, t.epoch, 0, t.x, t.masks[0], 0, t.logp) for t in joint]
        CX, CS, CR, _ = assign_advantages(batch, critic, cfg)
        for t, tr in zip(joint, batch.transitions):
            t.advantage = tr.advantage
        a_loss = 0.0
        for _ in range(cfg.passes):
            for idx in np.array_split(rng.permutation(len(joint)), max(1, len(joint) // cfg.minibatch)):
                if not len(idx):
                    continue
                ps.zero_grad()
                terms = []
                for j in idx:
                    t = joint[j]
                    ratio = ad.exp(ad.add(ca_joint_log_prob(ps, t), -t.logp))
                    c = ad.clip(ratio, 1 - cfg.clip, 1 + cfg.clip)
                    terms.append(ad.minimum(ad.scale(ratio, t.advantage), ad.scale(c, t.advantage)))
                loss = ad.neg(ad.scale(_stack_sum(terms), 1.0 / len(idx)))
                loss.backward()
                ps.adam_step(cfg.lr, max_norm=cfg.max_grad_norm)
                a_loss += float(loss.value)
        ppo_update(ps, critic, Rollout(), cfg, rng, (CX, CS, CR))
        log.append({"iteration": it, "mean_return": float(np.mean([r.epoch_rewards.sum() for r in batch.results])), "actor_loss": a_loss})
    return TrainResult(ps, critic, log)


def _stack_sum(terms: list[Tensor]) -> Tensor:
    out = terms[0]
    for t in terms[1:]:
        out = ad.add(out, t)
    return out
