"""Retrieval-augmented online fine-tuning of the shared actor.

At each decision epoch an agent summarizes its local situation in a 2-vector
context, pulls the most similar records from an experience bank, and takes a
few KL-bounded, advantage-weighted likelihood steps on a private copy of the
pretrained actor.  The copy is thrown away after the epoch's action.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .mappo import PPOConfig, Rollout, actor_log_probs, assign_advantages, collect, obs_features
from .scenario import Scenario
from .simulator import Observation, Simulation

CONTEXT_EPS = 1.0
K_RET = 256
W_CLIP = 5.0


def context_descriptor(obs: Observation) -> np.ndarray:
    """[hours to landfall, queued vehicles per in-service charger] over the observable set."""
    q = float(np.sum(obs.queue))
    m = float(np.sum(obs.chargers))
    return np.array([float(obs.hazard_h), q / (m if m > 0 else CONTEXT_EPS)])


@dataclass
class ExperienceRecord:
    context: np.ndarray
    x: np.ndarray
    mask: np.ndarray
    action: int
    reward: float
    advantage: float

    def __post_init__(self):
        self.context = np.asarray(self.context, dtype=np.float64)
        if not np.all(np.isfinite(self.context)):
            raise ValueError("context must be finite")
        if not np.isfinite(self.advantage):
            raise ValueError("advantage must be finite")


@dataclass
class ExperienceBank:
    records: list[ExperienceRecord] = field(default_factory=list)
    mean: np.ndarray = field(default_factory=lambda: np.zeros(2))
    std: np.ndarray = field(default_factory=lambda: np.ones(2))

    def __post_init__(self):
        self.refresh()

    def __len__(self) -> int:
        return len(self.records)

    def refresh(self) -> None:
        """Recompute standardization statistics and the context matrix."""
        if self.records:
            C = np.stack([r.context for r in self.records])
            self.mean, self.std = C.mean(axis=0), C.std(axis=0)
        else:
            C = np.zeros((0, 2))
        self._C = C

    @property
    def contexts(self) -> np.ndarray:
        return self._C

    @property
    def active(self) -> np.ndarray:
        """Context dimensions that carry information (std > 0)."""
        return self.std > 0

    def standardize(self, c) -> np.ndarray:
        c = np.asarray(c, dtype=np.float64)
        a = self.active
        return (c[..., a] - self.mean[a]) / self.std[a]

    # -------------------------------------------------------- serialization
    def to_arrays(self) -> dict[str, np.ndarray]:
        n = len(self.records)
        return {
            "index": np.arange(n, dtype=np.float64),
            "context": self._C,
            "x": np.stack([r.x for r in self.records]) if n else np.zeros((0, 0, 0)),
            "mask": np.stack([r.mask for r in self.records]).astype(np.float64) if n else np.zeros((0, 0)),
            "action": np.array([r.action for r in self.records], dtype=np.float64),
            "reward": np.array([r.reward for r in self.records], dtype=np.float64),
            "advantage": np.array([r.advantage for r in self.records], dtype=np.float64),
        }

    def save(self, path: str | Path) -> None:
        ad.save_arrays(path, self.to_arrays(), init="bank")

    @classmethod
    def load(cls, path: str | Path) -> "ExperienceBank":
        kind, a = ad.load_arrays(path)
        if kind != "bank":
            raise ValueError(f"{path}: not an experience bank (kind {kind!r})")
        order = np.argsort(a["index"], kind="stable")
        recs = [
            ExperienceRecord(a["context"][i], a["x"][i], a["mask"][i] > 0.5, int(a["action"][i]), float(a["reward"][i]), float(a["advantage"][i]))
            for i in order
        ]
        return cls(recs)


def retrieve(bank: ExperienceBank, c, k_ret: int = K_RET) -> np.ndarray:
    """Indices of the ``k_ret`` nearest records in standardized context space, ties by index."""
    if not len(bank):
        raise ValueError("empty experience bank")
    d2 = np.sum((bank.standardize(bank.contexts) - bank.standardize(c)) ** 2, axis=1)
    order = np.argsort(d2, kind="stable")
    return order[: min(k_ret, len(order))]


def advantage_weights(adv, beta: float = 1.0) -> np.ndarray:
    if beta <= 0:
        raise ValueError("beta must be positive")
    return np.exp(np.clip(np.asarray(adv, dtype=np.float64) / beta, -W_CLIP, W_CLIP))


# --------------------------------------------------------------- fine-tune
@dataclass
class FinetuneConfig:
    beta: float = 1.0
    eps_kl: float = 0.05
    lam_kl: float = 1.0
    steps: int = 10
    lr: float = 1e-3


@dataclass
class FinetuneResult:
    actor: ParamStore
    mean_kl: float
    steps: int
    losses: list[float]


def _subset_arrays(bank: ExperienceBank, idx) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    recs = [bank.records[i] for i in idx]
    x = np.stack([r.x for r in recs])
    mask = np.stack([r.mask for r in recs]).astype(bool)
    a = np.array([r.action for r in recs], dtype=np.int64)
    adv = np.array([r.advantage for r in recs])
    return x, mask, a, adv


def kl_to_reference(lp: Tensor, lp_ref: np.ndarray, mask: np.ndarray) -> Tensor:
    """Mean over rows of KL(pi || pi_ref); masked entries contribute nothing."""
    p = ad.mul(ad.exp(lp), mask.astype(np.float64))
    per = ad.sum_(ad.mul(p, ad.add(lp, -lp_ref)), axis=-1)
    return ad.mean(per)


def finetune_loss(actor: ParamStore, x, mask, actions, weights, lp_ref, lam_kl: float) -> tuple[Tensor, float]:
    """Negated objective: -(mean w log pi(a|o)) + lam_kl * meanKL; also returns the KL value."""
    lp = actor_log_probs(actor, x, mask)
    lp_a = ad.gather_last(lp, actions)
    w = np.asarray(weights, dtype=np.float64)
    like = ad.mean(ad.mul(lp_a, w))
    kl = kl_to_reference(lp, lp_ref, mask)
    return ad.add(ad.neg(like), ad.scale(kl, lam_kl)), float(kl.value)


def finetune_actor(
    pretrained: ParamStore,
    x: np.ndarray,
    mask: np.ndarray,
    actions: np.ndarray,
    advantages: np.ndarray,
    cfg: FinetuneConfig | None = None,
) -> FinetuneResult:
    """KL-penalized advantage-weighted steps on a copy, returning the last iterate within eps_kl."""
    cfg = cfg or FinetuneConfig()
    if len(actions) == 0:
        raise ValueError("empty retrieved subset")
    mask = np.asarray(mask, dtype=bool)
    w = advantage_weights(advantages, cfg.beta)
    w = w / w.mean()
    lp_ref = actor_log_probs(pretrained, x, mask).value
    cur = pretrained.copy()
    cur.reset_optimizer()
    keep = pretrained.copy()
    kept_kl, kept_steps, losses = 0.0, 0, []
    for step in range(cfg.steps):
        cur.zero_grad()
        loss, _ = finetune_loss(cur, x, mask, actions, w, lp_ref, cfg.lam_kl)
        loss.backward()
        losses.append(float(loss.value))
        cur.adam_step(cfg.lr)
        kl = float(kl_to_reference(actor_log_probs(cur, x, mask), lp_ref, mask).value)
        if not kl <= cfg.eps_kl:
            break
        keep.load_values(cur.values())
        kept_kl, kept_steps = kl, step + 1
    keep.reset_optimizer()
    return FinetuneResult(keep, kept_kl, kept_steps, losses)


# -------------------------------------------------------------------- bank
def build_bank(
    actor: ParamStore,
    critic: ParamStore,
    scenarios: Sequence[Scenario],
    seeds: Sequence[int],
    cfg: PPOConfig | None = None,
    max_records: int = 50_000,
) -> ExperienceBank:
    """Roll the frozen actor stochastically and keep one record per decision taken."""
    cfg = cfg or PPOConfig()
    recs: list[ExperienceRecord] = []
    for sc in scenarios:
        for sd in seeds:
            ro = Rollout()
            collect(actor, sc, sd, ro, 0, stochastic=True)
            assign_advantages(ro, critic, cfg)
            for t in ro.transitions:
                recs.append(ExperienceRecord(t.context, t.x, t.mask, t.action, t.reward, t.advantage))
            if len(recs) >= max_records:
                return ExperienceBank(recs[:max_records])
    return ExperienceBank(recs)


# ------------------------------------------------------------------ policy
@dataclass
class Adaptation:
    epoch: int
    truck: int
    mean_kl: float
    steps: int
    n_retrieved: int


class ArmdPolicy:
    """Pretrained actor plus per-epoch retrieval fine-tuning (off with ``finetune=False``).

    Every epoch starts from the pretrained parameters; ``epoch_hashes`` keeps
    the digest observed at each epoch start so the reset rule can be checked.
    """

    name = "armd"

    def __init__(
        self,
        actor: ParamStore,
        bank: ExperienceBank | None = None,
        cfg: FinetuneConfig | None = None,
        finetune: bool = True,
        stochastic: bool = False,
        k_ret: int = K_RET,
    ):
        if finetune and (bank is None or not len(bank)):
            raise ValueError("fine-tuning needs a non-empty experience bank")
        self.actor = actor
        self.bank = bank
        self.cfg = cfg or FinetuneConfig()
        self.finetune = finetune
        self.stochastic = stochastic
        self.k_ret = k_ret
        self.pretrained_hash = actor.digest()
        self.epoch_hashes: list[str] = []
        self.adaptations: list[Adaptation] = []
        self.rng: np.random.Generator | None = None

    def reset(self, sim: Simulation) -> None:
        self.rng = sim.rng["policy"]

    def _choose(self, ps: ParamStore, x, mask) -> int:
        lp = actor_log_probs(ps, x[None], mask[None]).value[0]
        if self.stochastic:
            p = np.where(mask, np.exp(lp), 0.0)
            return int(self.rng.choice(len(p), p=p / p.sum()))
        return int(np.argmax(np.where(mask, lp, -np.inf)))

    def act(self, sim: Simulation, observations: list[Observation]) -> list[int | None]:
        self.epoch_hashes.append(self.actor.digest())
        F, K = len(sim.stations), len(sim.trucks)
        out: list[int | None] = []
        cache: dict[bytes, ParamStore] = {}
        for o in observations:
            x, mask = obs_features(o, F, K)
            if not mask.any():
                out.append(None)
                continue
            ps = self.actor
            if self.finetune:
                idx = retrieve(self.bank, context_descriptor(o), self.k_ret)
                key = idx.tobytes()
                if key not in cache:
                    res = finetune_actor(self.actor, *_subset_arrays(self.bank, idx), self.cfg)
                    cache[key] = res.actor
                    self.adaptations.append(Adaptation(o.epoch, o.truck, res.mean_kl, res.steps, len(idx)))
                ps = cache[key]
            out.append(self._choose(ps, x, mask))
        return out
