"""Discrete-time evacuation and charging engine with the decision-epoch interface.

One call to :meth:`Simulation.step` advances the world by one step in this
order: release departures, move vehicles and refresh the travel-time field,
divert low-battery EVs, enqueue station arrivals, charge, sample charger
failures, move and time trucks, and accrue queue risk.

Evacuee state lives in flat numpy arrays indexed by evacuee id.  Stations and
trucks are small dataclasses.  Every random draw comes from one of four named
streams (demand, failures, policy, truck) derived from the episode seed.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .demand import Status, generate_evacuees, select_station
from .network import (
    UNREACHABLE,
    RoadNetwork,
    Unreachable,
    congested_travel_time,
    distance_matrix,
    path_from_distances,
)
from .scenario import Scenario

STREAMS = ("demand", "failures", "policy", "truck")

IDLE, TRAVELING, SERVING = "idle", "traveling", "serving"

# link flow = vehicles entering the link over the trailing window, as veh/h
FLOW_WINDOW_STEPS = 3


class InvalidAction(ValueError):
    """A truck was sent to a station outside its candidate set."""


def make_streams(seed: int) -> dict[str, np.random.Generator]:
    return {name: np.random.default_rng([int(seed), k]) for k, name in enumerate(STREAMS)}


@dataclass
class StationState:
    id: int
    node: int
    zone: str
    installed: int
    chargers: int
    queue: deque = field(default_factory=deque)
    fixed_slots: list = field(default_factory=list)
    serving_trucks: list = field(default_factory=list)
    arrivals: int = 0
    served: int = 0
    stranded: int = 0

    @property
    def Q(self) -> int:
        return len(self.queue)

    @property
    def c(self) -> int:
        return len(self.serving_trucks)

    def in_service(self, trucks: Sequence["TruckState"]) -> int:
        n = sum(1 for ev in self.fixed_slots if ev >= 0)
        for k in self.serving_trucks:
            n += sum(1 for ev in trucks[k].slots if ev >= 0)
        return n


@dataclass
class TruckState:
    id: int
    node: int
    capability_kwh: float
    chargers: int
    phase: str = IDLE
    target: int = -1
    route: list = field(default_factory=list)
    pos: int = 0
    frac: float = 0.0
    timer_min: float = 0.0
    slots: list = field(default_factory=list)
    delivered_kwh: float = 0.0

    @property
    def edge(self) -> int:
        if self.phase == TRAVELING and self.pos < len(self.route) and self.frac > 0.0:
            return self.route[self.pos]
        return -1


@dataclass
class Observation:
    truck: int
    epoch: int
    hazard_h: float
    candidates: np.ndarray
    queue: np.ndarray
    risk: np.ndarray
    chargers: np.ndarray
    serving: np.ndarray
    travel_min: np.ndarray
    capability_kwh: float

    @property
    def reachable(self) -> np.ndarray:
        return np.isfinite(self.travel_min)


class Router(Protocol):
    rolling: bool

    def plan(self, sim: "Simulation", origin: int, dest: int, depart_min: float | None = None) -> list[int]: ...


class SnapshotRouter:
    """Shortest path on the travel-time field current at planning time."""

    rolling = False

    def plan(self, sim: "Simulation", origin: int, dest: int, depart_min: float | None = None) -> list[int]:
        return sim.snapshot_path(origin, dest)


@dataclass
class EpisodeResult:
    scenario: str
    seed: int
    step_min: float
    time_min: np.ndarray
    queue: np.ndarray
    risk: np.ndarray
    chargers: np.ndarray
    serving: np.ndarray
    exposure: np.ndarray
    truck_log: list
    arrivals_by_epoch: np.ndarray
    epoch_rewards: np.ndarray
    n_evac: int
    travel_times: np.ndarray
    station_nodes: list

    @property
    def total_risk(self) -> float:
        return float(self.exposure.sum())


class Simulation:
    """Mutable world state of one episode."""

    def __init__(self, scenario: Scenario, seed: int = 0, router: Router | None = None):
        self.scenario = scenario
        self.seed = int(seed)
        self.net: RoadNetwork = scenario.network
        self.hazard = scenario.hazard
        self.epochs = scenario.epochs
        self.dt = scenario.epochs.step_min
        self.router: Router = router if router is not None else SnapshotRouter()
        self.rng = make_streams(seed)
        self.step_index = 0
        net = self.net
        tog = scenario.toggles

        self.closed = np.zeros(net.n_edges, dtype=bool)
        self.closed[list(tog.closed_edges)] = True
        self.capacity = net.capacity.copy()
        if tog.reduced_capacity_edges:
            self.capacity[list(tog.reduced_capacity_edges)] *= tog.reduced_capacity_factor
        self.field = net.free_flow.copy()
        self.field[self.closed] = UNREACHABLE
        self._entries = np.zeros((FLOW_WINDOW_STEPS, net.n_edges))
        self._dist = None
        self._path_cache: dict[tuple[int, int], list[int]] = {}

        # stations
        self.stations: list[StationState] = []
        for sid, (node, m) in enumerate(zip(net.stations, net.station_chargers)):
            self.stations.append(StationState(sid, node, net.zone_of(node), m, m, fixed_slots=[-1] * m))
        fail_rng = self.rng["failures"]
        if tog.station_failure_prob > 0:
            dead = fail_rng.random(len(self.stations)) < tog.station_failure_prob
            for st, d in zip(self.stations, dead):
                if d:
                    st.chargers = 0
                    st.fixed_slots = []
        offs = self.hazard.offsets_h
        self._station_offset = np.array([offs.get(st.zone, 0.0) for st in self.stations])

        # trucks
        f = scenario.fleet
        self.trucks = [
            TruckState(k, f.start_node(k), f.capability_kwh, f.chargers_per_truck, slots=[-1] * f.chargers_per_truck)
            for k in range(f.trucks)
        ]

        # evacuees
        people = generate_evacuees(
            scenario.demand, net, self.rng["demand"], scenario.epochs.horizon_h, tog.closed_edges, on_unreachable="strand"
        )
        n = len(people)
        self.n_people = n
        self.origin = np.array([net.node_index[p.origin] for p in people], dtype=np.int64)
        self.dest = np.array([-1 if p.destination is None else net.node_index[p.destination] for p in people], dtype=np.int64)
        self.depart = np.array([p.departure_min for p in people], dtype=np.float64)
        self.is_ev = np.array([p.is_ev for p in people], dtype=bool)
        self.soc = np.array([p.soc for p in people], dtype=np.float64)
        self.battery = np.array([p.battery_kwh for p in people], dtype=np.float64)
        self.cons = np.array([p.consumption_kwh_per_km for p in people], dtype=np.float64)
        self.status = np.array([int(p.status) for p in people], dtype=np.int64)
        self.node = self.origin.copy()
        self.cur_edge = np.full(n, -1, dtype=np.int64)
        self.frac = np.zeros(n)
        self.target_station = np.full(n, -1, dtype=np.int64)
        self.seeking = np.zeros(n, dtype=bool)
        self.routes: list[list[int]] = [[] for _ in range(n)]
        self.ptr = np.zeros(n, dtype=np.int64)
        self._release_order = np.argsort(self.depart, kind="stable")
        self._released = 0
        self.n_evac = int(self.is_ev.sum())
        self.stranded_on_road = int((self.status == Status.STRANDED).sum())
        self.energy_charged_kwh = 0.0
        self._pending_arrivals: list[int] = []

        # traces
        T, F = self.epochs.n_steps, len(self.stations)
        self.trace_queue = np.zeros((T, F), dtype=np.int64)
        self.trace_risk = np.zeros((T, F))
        self.trace_chargers = np.zeros((T, F), dtype=np.int64)
        self.trace_serving = np.zeros((T, F), dtype=np.int64)
        self.trace_exposure = np.zeros((T, F))
        self.trace_tt = np.zeros((T, net.n_edges))
        self.arrivals_by_epoch = np.zeros((self.epochs.n_epochs, F), dtype=np.int64)
        self.truck_log: list[tuple] = []

    # ------------------------------------------------------------------ clock
    @property
    def clock_min(self) -> float:
        return self.step_index * self.dt

    @property
    def done(self) -> bool:
        return self.step_index >= self.epochs.n_steps

    def station_risk(self, t_h: float) -> np.ndarray:
        h = self.hazard.landfall_h - t_h + self._station_offset
        return np.where(h > 0.0, np.exp(-np.maximum(h, 0.0) / self.hazard.tau_h), 1.0)

    def epoch_of_step(self, s: int) -> int:
        return min(s // self.epochs.steps_per_epoch, self.epochs.n_epochs - 1)

    # --------------------------------------------------------------- routing
    @property
    def dist(self) -> np.ndarray:
        if self._dist is None:
            self._dist = distance_matrix(self.net, self.field)
        return self._dist

    def _set_field(self, field_: np.ndarray) -> None:
        self.field = field_
        self._dist = None
        self._path_cache.clear()

    def snapshot_path(self, origin: int, dest: int) -> list[int]:
        """Edge ids of the current-snapshot shortest path between node indices."""
        key = (origin, dest)
        if key not in self._path_cache:
            if origin == dest:
                self._path_cache[key] = []
            else:
                ids = self.net.node_ids
                self._path_cache[key] = path_from_distances(self.net, self.field, self.dist, ids[origin], ids[dest])
        return self._path_cache[key]

    def _start_route(self, i: int, dest: int) -> None:
        """Send evacuee ``i`` from its current node to node index ``dest``."""
        try:
            route = self.snapshot_path(int(self.node[i]), dest)
        except Unreachable:
            self._strand(i)
            return
        self.routes[i] = route
        self.ptr[i] = 0
        self.status[i] = Status.DRIVING
        if route:
            self.cur_edge[i] = route[0]
            self.frac[i] = 1.0
            self._entries[0, route[0]] += 1
        else:
            self.cur_edge[i] = -1
            self.frac[i] = 0.0

    def _strand(self, i: int) -> None:
        self.status[i] = Status.STRANDED
        self.cur_edge[i] = -1
        self.seeking[i] = False
        self.stranded_on_road += 1

    # ------------------------------------------------------------------ step
    def step(self) -> None:
        if self.done:
            raise RuntimeError("episode horizon reached")
        s = self.step_index
        t0 = s * self.dt
        t_h = t0 / 60.0
        self._release(t0 + self.dt)
        reached = self._advance_vehicles()
        self._refresh_field()
        self._divert_seekers()
        self._enqueue(reached, s)
        risk = self.station_risk(t_h)
        for st in self.stations:
            self._serve(st)
        self._fail_chargers(risk)
        self._move_trucks(s)
        self._record(s, risk)
        self.step_index += 1
        self._entries = np.roll(self._entries, 1, axis=0)
        self._entries[0] = 0.0

    def _release(self, t_end: float) -> None:
        order = self._release_order
        k = self._released
        while k < len(order) and self.depart[order[k]] < t_end:
            i = int(order[k])
            k += 1
            if self.status[i] != Status.WAITING:
                continue
            self._start_route(i, int(self.dest[i]))
            if self.status[i] == Status.DRIVING and self.is_ev[i] and self.soc[i] < self.scenario.demand.seek_soc:
                self.seeking[i] = True
                self.cur_edge[i] = -1
        self._released = k

    def _advance_vehicles(self) -> list[int]:
        """Move driving vehicles for one step; returns ids that reached a station."""
        net = self.net
        reached: list[int] = []
        ids = np.flatnonzero((self.status == Status.DRIVING) & ~self.seeking)
        budget = np.full(ids.size, self.dt)
        # zero-length routes (already at the route end) are settled first
        at_end = self.cur_edge[ids] < 0
        for i in ids[at_end]:
            self._route_end(int(i), reached)
        ids, budget = ids[~at_end], budget[~at_end]
        seek_soc = self.scenario.demand.seek_soc
        while ids.size:
            e = self.cur_edge[ids]
            tt = self.field[e]
            need = self.frac[ids] * tt
            fin = budget >= need
            part = ~fin
            if part.any():
                p = ids[part]
                used = budget[part] / tt[part]
                self.frac[p] -= used
                self._drain(p, net.lengths[e[part]] * used)
            nxt_ids, nxt_budget = [], []
            f = ids[fin]
            if f.size:
                self._drain(f, net.lengths[e[fin]] * self.frac[f])
                self.frac[f] = 0.0
                left = budget[fin] - need[fin]
                for i, b in zip(f.tolist(), left.tolist()):
                    if self.status[i] != Status.DRIVING:
                        continue
                    edge = self.cur_edge[i]
                    self.node[i] = net.heads[edge]
                    self.ptr[i] += 1
                    if self.ptr[i] >= len(self.routes[i]):
                        self.cur_edge[i] = -1
                        self._route_end(i, reached)
                        continue
                    if self.is_ev[i] and self.target_station[i] < 0 and self.soc[i] < seek_soc:
                        self.seeking[i] = True
                        self.cur_edge[i] = -1
                        continue
                    self.cur_edge[i] = self.routes[i][self.ptr[i]]
                    self.frac[i] = 1.0
                    self._entries[0, self.cur_edge[i]] += 1
                    if b > 0.0:
                        nxt_ids.append(i)
                        nxt_budget.append(b)
            ids = np.array(nxt_ids, dtype=np.int64)
            budget = np.array(nxt_budget)
        return reached

    def _drain(self, ids: np.ndarray, km: np.ndarray) -> None:
        ev = self.is_ev[ids]
        if not ev.any():
            return
        j = ids[ev]
        self.soc[j] -= km[ev] * self.cons[j] / self.battery[j]
        empty = j[self.soc[j] <= 0.0]
        for i in empty.tolist():
            self.soc[i] = 0.0
            self._strand(i)

    def _route_end(self, i: int, reached: list[int]) -> None:
        if self.target_station[i] >= 0:
            reached.append(i)
        elif self.is_ev[i] and self.soc[i] < self.scenario.demand.seek_soc and self.node[i] != self.dest[i]:
            self.seeking[i] = True
        else:
            self.status[i] = Status.ARRIVED

    def _refresh_field(self) -> None:
        flow = self._entries.sum(axis=0) * 60.0 / (FLOW_WINDOW_STEPS * self.dt)
        tt = congested_travel_time(self.net.free_flow, self.capacity, flow)
        tt = np.where(self.closed, UNREACHABLE, tt)
        self._set_field(tt)

    def _divert_seekers(self) -> None:
        ids = np.flatnonzero(self.seeking & (self.status == Status.DRIVING))
        if not ids.size:
            return
        net = self.net
        usable = [st.chargers > 0 or st.c > 0 for st in self.stations]
        for i in ids.tolist():
            self.seeking[i] = False
            node = net.node_ids[self.node[i]]
            range_km = self.soc[i] * self.battery[i] / self.cons[i]
            sid = select_station(net, self.field, self.dist, node, range_km, usable)
            if sid is None:
                sid = select_station(net, self.field, self.dist, node, range_km)
            if sid is None:
                self._strand(i)
                continue
            self.target_station[i] = sid
            self._start_route(i, net.node_index[self.stations[sid].node])
            if self.cur_edge[i] < 0 and self.status[i] == Status.DRIVING:
                # already at the station node; joins the queue this step
                self._pending_arrivals.append(i)

    def _enqueue(self, reached: list[int], s: int) -> None:
        m = self.epoch_of_step(s)
        for i in [*reached, *self._pending_arrivals]:
            st = self.stations[self.target_station[i]]
            st.queue.append(i)
            st.arrivals += 1
            self.arrivals_by_epoch[m, st.id] += 1
            self.status[i] = Status.QUEUING
            self.cur_edge[i] = -1
        self._pending_arrivals = []

    def _slot_lists(self, st: StationState) -> list[tuple[list, TruckState | None]]:
        out: list[tuple[list, TruckState | None]] = [(st.fixed_slots, None)]
        for k in sorted(st.serving_trucks):
            out.append((self.trucks[k].slots, self.trucks[k]))
        return out

    def _bump(self, st: StationState, slots: list) -> None:
        """Return occupants of ``slots`` to the head of the queue, preserving their order."""
        occupants = [ev for ev in slots if ev >= 0]
        for ev in reversed(occupants):
            st.queue.appendleft(ev)
            self.status[ev] = Status.QUEUING
        for j in range(len(slots)):
            slots[j] = -1

    def _serve(self, st: StationState) -> None:
        demand = self.scenario.demand
        for slots, truck in self._slot_lists(st):
            if truck is not None and truck.capability_kwh <= 0.0:
                self._bump(st, slots)
                continue
            rate = (self.scenario.charger_kw if truck is None else self.scenario.mct_charger_kw) / 60.0
            for j in range(len(slots)):
                budget = self.dt
                while budget > 0.0:
                    ev = slots[j]
                    if ev < 0:
                        if not st.queue:
                            break
                        ev = st.queue.popleft()
                        slots[j] = ev
                        self.status[ev] = Status.CHARGING
                    need = (demand.target_soc - self.soc[ev]) * self.battery[ev]
                    give = min(need, rate * budget)
                    if truck is not None:
                        give = min(give, truck.capability_kwh)
                    if give <= 0.0 and need > 0.0:
                        break
                    budget -= give / rate
                    self.energy_charged_kwh += give
                    if truck is not None:
                        truck.capability_kwh -= give
                        truck.delivered_kwh += give
                    if give >= need:
                        self.soc[ev] = demand.target_soc
                        slots[j] = -1
                        st.served += 1
                        self._resume(ev, st)
                    else:
                        self.soc[ev] += give / self.battery[ev]
                        break
                if truck is not None and truck.capability_kwh <= 0.0:
                    truck.capability_kwh = 0.0
                    self._bump(st, slots)
                    break

    def _resume(self, i: int, st: StationState) -> None:
        self.target_station[i] = -1
        self.node[i] = self.net.node_index[st.node]
        if self.node[i] == self.dest[i]:
            self.status[i] = Status.ARRIVED
            return
        self._start_route(i, int(self.dest[i]))
        if self.status[i] == Status.DRIVING and self.cur_edge[i] < 0:
            self.status[i] = Status.ARRIVED

    def _fail_chargers(self, risk: np.ndarray) -> None:
        rng = self.rng["failures"]
        p = np.minimum(1.0, self.hazard.kappa * risk)
        for st, pi in zip(self.stations, p):
            if st.chargers <= 0 or pi <= 0.0:
                continue
            lost = int(rng.binomial(st.chargers, pi))
            if lost:
                st.chargers -= lost
                removed = st.fixed_slots[st.chargers :]
                del st.fixed_slots[st.chargers :]
                self._bump(st, removed)

    # ---------------------------------------------------------------- trucks
    def _move_trucks(self, s: int) -> None:
        reroute_every = max(1, int(round(self.epochs.reroute_min / self.dt)))
        for tr in self.trucks:
            if tr.phase == SERVING:
                tr.timer_min -= self.dt
                if tr.timer_min <= 1e-9:
                    self._end_service(tr)
            elif tr.phase == TRAVELING:
                if self.router.rolling and s > 0 and s % reroute_every == 0:
                    self._replan(tr)
                self._advance_truck(tr)

    def _end_service(self, tr: TruckState) -> None:
        st = self.stations[tr.target]
        self._bump(st, tr.slots)
        st.serving_trucks.remove(tr.id)
        tr.phase, tr.target, tr.timer_min = IDLE, -1, 0.0

    def _replan(self, tr: TruckState) -> None:
        """Re-plan the remainder of the route from the next node reached."""
        net = self.net
        depart = self.clock_min
        if tr.frac > 0.0:
            e = tr.route[tr.pos]
            keep = [e]
            start = net.node_ids[net.heads[e]]
            depart += tr.frac * self.field[e]
        else:
            keep = []
            start = tr.node
        dest = self.stations[tr.target].node
        try:
            rest = self.router.plan(self, net.node_index[start], net.node_index[dest], depart) if start != dest else []
        except Unreachable:
            return
        tr.route = tr.route[: tr.pos] + keep + rest

    def _advance_truck(self, tr: TruckState) -> None:
        net = self.net
        budget = self.dt
        while budget > 0.0 and tr.pos < len(tr.route):
            e = tr.route[tr.pos]
            if tr.frac <= 0.0:
                tr.frac = 1.0
            tt = self.field[e]
            if not np.isfinite(tt):
                tr.frac = 0.0 if tr.frac >= 1.0 else tr.frac
                return
            need = tr.frac * tt
            if budget >= need:
                budget -= need
                tr.frac = 0.0
                tr.pos += 1
                tr.node = net.edges[e].head
            else:
                tr.frac -= budget / tt
                budget = 0.0
        if tr.pos >= len(tr.route):
            self._start_service(tr)

    def _start_service(self, tr: TruckState) -> None:
        st = self.stations[tr.target]
        tr.node = st.node
        tr.route, tr.pos, tr.frac = [], 0, 0.0
        tr.phase = SERVING
        tr.timer_min = self.scenario.fleet.service_min
        st.serving_trucks.append(tr.id)

    # ----------------------------------------------------------------- trace
    def _record(self, s: int, risk: np.ndarray) -> None:
        q = np.array([st.Q for st in self.stations], dtype=np.int64)
        self.trace_queue[s] = q
        self.trace_risk[s] = risk
        self.trace_chargers[s] = [st.chargers for st in self.stations]
        self.trace_serving[s] = [st.c for st in self.stations]
        self.trace_exposure[s] = risk * q * (self.dt / 60.0)
        self.trace_tt[s] = self.field
        t = s * self.dt
        for tr in self.trucks:
            node = tr.node if tr.edge < 0 else -1
            self.truck_log.append((t, tr.id, tr.phase, node, tr.edge, tr.capability_kwh))

    # ------------------------------------------------------ decision interface
    def truck_anchor(self, tr: TruckState) -> tuple[int, float]:
        """Node index a truck is at or heading to next, plus minutes to get there."""
        e = tr.edge
        if e >= 0:
            return int(self.net.heads[e]), float(tr.frac * self.field[e])
        return self.net.node_index[tr.node], 0.0

    def truck_travel_times(self, tr: TruckState) -> np.ndarray:
        a, extra = self.truck_anchor(tr)
        idx = [self.net.node_index[st.node] for st in self.stations]
        return self.dist[a, idx] + extra

    def candidate_set(self, tr: TruckState, m: int) -> np.ndarray:
        F = len(self.stations)
        if m % self.epochs.aug_every == 0 or self.epochs.n_local >= F:
            return np.arange(F)
        L = self.truck_travel_times(tr)
        order = np.lexsort((np.arange(F), L))
        return np.sort(order[: self.epochs.n_local])

    def observe(self, k: int, m: int) -> Observation:
        tr = self.trucks[k]
        cand = self.candidate_set(tr, m)
        L = self.truck_travel_times(tr)[cand]
        t_h = m * self.epochs.epoch_h
        risk = self.station_risk(t_h)
        sts = [self.stations[i] for i in cand]
        return Observation(
            truck=k,
            epoch=m,
            hazard_h=self.hazard.global_hazard(t_h),
            candidates=cand,
            queue=np.array([st.Q for st in sts], dtype=np.float64),
            risk=risk[cand],
            chargers=np.array([st.chargers for st in sts], dtype=np.float64),
            serving=np.array([st.c for st in sts], dtype=np.float64),
            travel_min=L,
            capability_kwh=tr.capability_kwh,
        )

    def idle_trucks(self) -> list[int]:
        return [tr.id for tr in self.trucks if tr.phase == IDLE]

    def apply_actions(self, actions: dict[int, int | None], observations: dict[int, Observation] | None = None) -> None:
        """Dispatch idle trucks; busy trucks keep their commitments and ``None`` means hold."""
        m = self.epoch_of_step(self.step_index)
        for k in sorted(actions):
            a = actions[k]
            tr = self.trucks[k]
            if tr.phase != IDLE or a is None:
                continue
            cand = observations[k].candidates if observations and k in observations else self.candidate_set(tr, m)
            if int(a) not in set(int(c) for c in cand):
                raise InvalidAction(f"truck {k}: station {a} not in candidate set {list(map(int, cand))}")
            st = self.stations[int(a)]
            tr.target = st.id
            if tr.node == st.node:
                self._start_service(tr)
                continue
            o, d = self.net.node_index[tr.node], self.net.node_index[st.node]
            try:
                route = self.router.plan(self, o, d)
            except Unreachable:
                tr.target = -1
                continue
            tr.phase, tr.route, tr.pos, tr.frac = TRAVELING, list(route), 0, 0.0

    def epoch_reward(self, m: int) -> float:
        spe = self.epochs.steps_per_epoch
        return epoch_reward(self.trace_exposure, m * spe, (m + 1) * spe)

    def result(self) -> EpisodeResult:
        M = self.epochs.n_epochs
        rewards = np.array([self.epoch_reward(m) for m in range(M)])
        T = self.epochs.n_steps
        return EpisodeResult(
            scenario=self.scenario.name,
            seed=self.seed,
            step_min=self.dt,
            time_min=np.arange(T) * self.dt,
            queue=self.trace_queue,
            risk=self.trace_risk,
            chargers=self.trace_chargers,
            serving=self.trace_serving,
            exposure=self.trace_exposure,
            truck_log=self.truck_log,
            arrivals_by_epoch=self.arrivals_by_epoch,
            epoch_rewards=rewards,
            n_evac=self.n_evac,
            travel_times=self.trace_tt,
            station_nodes=[st.node for st in self.stations],
        )

    # -------------------------------------------------------------- checks
    def station_flow_balance(self) -> list[tuple[int, int, int, int, int]]:
        """Per station: (arrivals, served, queued, in service, stranded)."""
        return [(st.arrivals, st.served, st.Q, st.in_service(self.trucks), st.stranded) for st in self.stations]


def step(sim: Simulation) -> Simulation:
    sim.step()
    return sim


def observe(sim: Simulation, k: int, m: int) -> Observation:
    return sim.observe(k, m)


def apply_actions(sim: Simulation, actions: dict[int, int | None]) -> Simulation:
    sim.apply_actions(actions)
    return sim


def epoch_reward(exposure: np.ndarray, start_step: int, end_step: int) -> float:
    """Negative summed queue risk over trace rows [start, end)."""
    return -float(exposure[start_step:end_step].sum())


class Policy(Protocol):
    name: str

    def reset(self, sim: Simulation) -> None: ...

    def act(self, sim: Simulation, observations: list[Observation]) -> list[int | None]: ...


def run_episode(
    scenario: Scenario,
    policy: Policy,
    seed: int,
    router: Router | None = None,
    on_epoch: Callable[[Simulation, int], None] | None = None,
) -> EpisodeResult:
    """Run the full horizon, querying ``policy`` for idle trucks at each decision epoch."""
    sim = Simulation(scenario, seed, router)
    policy.reset(sim)
    spe = sim.epochs.steps_per_epoch
    while not sim.done:
        s = sim.step_index
        if s % spe == 0:
            m = s // spe
            if on_epoch is not None:
                on_epoch(sim, m)
            idle = sim.idle_trucks()
            if idle:
                obs = [sim.observe(k, m) for k in idle]
                acts = policy.act(sim, obs)
                sim.apply_actions(dict(zip(idle, acts)), {o.truck: o for o in obs})
        sim.step()
    res = sim.result()
    finish = getattr(policy, "finish", None)
    if finish is not None:
        finish(sim, res)
    return res
