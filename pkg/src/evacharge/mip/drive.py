"""Forecast profiles from No-MCT runs and the OF-MIP / RH-MIP dispatch policies."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..network import distance_matrix
from ..policies import HoldPolicy
from ..scenario import Scenario
from ..simulator import Observation, Simulation, run_episode
from .model import EXACT_GROUP_LIMIT, REFILL_KWH, MipInstance, MipSolution, solve_exact, solve_heuristic


@dataclass
class Profiles:
    arrivals: np.ndarray  # (M, F) mean arrivals per epoch
    chargers: np.ndarray  # (M, F) mean operational chargers at epoch start
    od_h: np.ndarray  # (M, F, F) mean station-to-station travel hours at epoch start
    n_runs: int


def forecast_profiles(scenario: Scenario, n_runs: int = 10, seeds: Sequence[int] | None = None) -> Profiles:
    """Per-station per-epoch means over ``n_runs`` No-MCT episodes."""
    seeds = list(seeds) if seeds is not None else [10_000 + r for r in range(n_runs)]
    seeds = seeds[:n_runs]
    net = scenario.network
    idx = [net.node_index[n] for n in net.stations]
    spe = scenario.epochs.steps_per_epoch
    arr, chg, od = [], [], []
    for sd in seeds:
        res = run_episode(scenario, HoldPolicy(), sd)
        M = res.arrivals_by_epoch.shape[0]
        arr.append(res.arrivals_by_epoch.astype(np.float64))
        rows = [min(m * spe, len(res.chargers) - 1) for m in range(M)]
        chg.append(res.chargers[rows].astype(np.float64))
        mats = []
        for r in rows:
            d = distance_matrix(net, res.travel_times[r])[np.ix_(idx, idx)] / 60.0
            mats.append(d)
        od.append(np.stack(mats))
    od_arr = np.stack(od)
    # a pair unreachable in some runs takes the mean over the runs where it was reachable
    fin = np.isfinite(od_arr)
    with np.errstate(invalid="ignore"):
        od_mean = np.where(fin.any(axis=0), np.where(fin, od_arr, 0.0).sum(axis=0) / np.maximum(fin.sum(axis=0), 1), np.inf)
    return Profiles(np.mean(arr, axis=0), np.mean(chg, axis=0), od_mean, len(seeds))


def instance_from_state(sim: Simulation, prof: Profiles, start_epoch: int, horizon: int | None = None) -> MipInstance:
    """Build an instance for epochs [start, start + horizon) from the realized state."""
    M = prof.arrivals.shape[0]
    end = M if horizon is None else min(M, start_epoch + horizon)
    P = max(end - start_epoch, 1)
    ep = [min(start_epoch + p, M - 1) for p in range(P)]
    F = len(sim.stations)
    K = len(sim.trucks)
    q0 = np.array([st.Q for st in sim.stations], dtype=np.float64)
    cur = np.array([st.chargers for st in sim.stations], dtype=np.float64)
    chargers = np.stack([np.minimum(cur, prof.chargers[e]) for e in ep], axis=1)
    arrivals = np.stack([prof.arrivals[e] for e in ep], axis=1)
    # unreachable relocations get a travel time longer than an epoch (no service)
    big = 2.0 * sim.epochs.epoch_h
    l0 = np.zeros((K, F))
    for k, tr in enumerate(sim.trucks):
        l0[k] = np.where(np.isfinite(t := sim.truck_travel_times(tr) / 60.0), t, big)
    od = np.where(np.isfinite(prof.od_h), prof.od_h, big)
    relocate = np.stack([np.stack([od[e] for e in ep]) for _ in range(K)]) if K else np.zeros((0, P, F, F))
    cap = np.array([tr.capability_kwh / REFILL_KWH for tr in sim.trucks])
    sat = np.array([sim.hazard.landfall_h + sim.hazard.offsets_h.get(st.zone, 0.0) for st in sim.stations])
    return MipInstance(
        arrivals=arrivals,
        chargers=chargers,
        q0=q0,
        l0=l0,
        relocate=relocate,
        capability=cap,
        sat_h=sat,
        t0_h=start_epoch * sim.epochs.epoch_h,
        tau_h=sim.hazard.tau_h,
        delta_h=sim.epochs.epoch_h,
    )


def solve_instance(inst: MipInstance, node_limit: int | None) -> MipSolution:
    if inst.K * inst.P <= EXACT_GROUP_LIMIT:
        return solve_exact(inst, node_limit, seed_heuristic=True)
    return solve_heuristic(inst)


def repair_target(sim: Simulation, obs: Observation, target: int) -> int | None:
    """Keep ``target`` if it is a reachable in-service candidate, else the closest reachable one."""
    cand = [int(c) for c in obs.candidates]
    reach = {c: t for c, t in zip(cand, obs.travel_min) if np.isfinite(t)}
    if target in reach and sim.stations[target].chargers > 0:
        return target
    if not reach:
        return None
    live = [c for c in reach if sim.stations[c].chargers > 0] or list(reach)
    return min(live, key=lambda c: (reach[c], c))


ROLLING_NODE_LIMIT = 0


class MipPolicy:
    """OF-MIP (``mode="offline"``) or RH-MIP (``mode="rolling"``).

    Rolling solves use a branch-and-bound node budget (default
    ``ROLLING_NODE_LIMIT``) on top of the better of LP rounding and the greedy
    heuristic; solutions cut short carry ``exact=False``.
    """

    def __init__(self, profiles: Profiles, mode: str = "rolling", horizon: int = 3, node_limit: int | None = ROLLING_NODE_LIMIT):
        if mode not in ("offline", "rolling"):
            raise ValueError(f"unknown mode {mode!r}")
        self.profiles = profiles
        self.mode = mode
        self.name = "of-mip" if mode == "offline" else "rh-mip"
        self.horizon = horizon
        self.node_limit = node_limit
        self.plan: np.ndarray | None = None
        self.plan_start = 0
        self.solutions: list[MipSolution] = []
        self.joint_actions: list[tuple[int, dict[int, int | None]]] = []
        self.repairs = 0

    def reset(self, sim: Simulation) -> None:
        self.plan = None
        self.solutions = []
        self.joint_actions = []
        self.repairs = 0
        if self.mode == "offline":
            inst = instance_from_state(sim, self.profiles, 0, None)
            sol = solve_instance(inst, self.node_limit)
            self.solutions.append(sol)
            self.plan, self.plan_start = sol.assignment(), 0

    def _targets(self, sim: Simulation, m: int) -> np.ndarray:
        if self.mode == "rolling":
            inst = instance_from_state(sim, self.profiles, m, self.horizon)
            sol = solve_instance(inst, self.node_limit)
            self.solutions.append(sol)
            self.plan, self.plan_start = sol.assignment(), m
        p = min(m - self.plan_start, self.plan.shape[1] - 1)
        return self.plan[:, p]

    def act(self, sim: Simulation, observations: list[Observation]) -> list[int | None]:
        if not observations:
            return []
        m = observations[0].epoch
        targets = self._targets(sim, m)
        out: list[int | None] = []
        for o in observations:
            want = int(targets[o.truck])
            got = repair_target(sim, o, want)
            if got != want:
                self.repairs += 1
            out.append(got)
        self.joint_actions.append((m, {o.truck: a for o, a in zip(observations, out)}))
        return out
