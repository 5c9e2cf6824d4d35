"""Time-dependent routing of trucks over forecast travel times, with rolling re-planning."""

from __future__ import annotations

import heapq
from typing import Callable

import numpy as np

from .network import RoadNetwork, Unreachable, _tight

Forecaster = Callable[["object"], np.ndarray]


def edge_cost(forecast: np.ndarray, e: int, depart_min: float, enter_min: float, step_min: float = 5.0) -> float:
    """Forecast minutes for edge ``e`` entered at ``enter_min``; rows past the end repeat the last one."""
    k = int(np.floor((enter_min - depart_min) / step_min + 1e-9))
    k = min(max(k, 0), forecast.shape[0] - 1)
    return float(forecast[k, e])


def plan_route(
    net: RoadNetwork,
    forecast: np.ndarray,
    depart_min: float,
    origin: int,
    dest: int,
    step_min: float = 5.0,
    forecast_start_min: float | None = None,
) -> tuple[list[int], float]:
    """Earliest-arrival path under a piecewise-constant forecast.

    Row k of ``forecast`` covers [start + k*step, start + (k+1)*step) with
    start = ``forecast_start_min`` (default ``depart_min``).

    Label-setting Dijkstra on arrival times; equal arrivals keep the
    lexicographically smaller edge sequence.  Raises ``Unreachable``.
    """
    forecast = np.asarray(forecast, dtype=np.float64)
    if forecast.ndim != 2 or forecast.shape[1] != net.n_edges:
        raise ValueError(f"forecast must be (steps, {net.n_edges})")
    f0 = depart_min if forecast_start_min is None else forecast_start_min
    if origin == dest:
        return [], float(depart_min)
    o, d = net.node_index[origin], net.node_index[dest]
    best: dict[int, tuple[float, list[int]]] = {o: (float(depart_min), [])}
    heap: list[tuple[float, list[int], int]] = [(float(depart_min), [], o)]
    done: set[int] = set()
    while heap:
        t, path, u = heapq.heappop(heap)
        if u in done:
            continue
        bt, bp = best[u]
        if t != bt or path != bp:
            continue
        done.add(u)
        if u == d:
            return path, t
        for e in net.out_edges[u]:
            c = edge_cost(forecast, e, f0, t, step_min)
            if not np.isfinite(c):
                continue
            w = int(net.heads[e])
            if w in done:
                continue
            na, npth = t + c, path + [e]
            cur = best.get(w)
            if cur is None or (na < cur[0] and not _tight(na, cur[0])) or (_tight(na, cur[0]) and npth < cur[1]):
                if cur is not None and _tight(na, cur[0]):
                    na = min(na, cur[0])
                best[w] = (na, npth)
                heapq.heappush(heap, (na, npth, w))
    raise Unreachable(f"{origin} -> {dest}")


def predicted_arrival(net: RoadNetwork, forecast: np.ndarray, depart_min: float, path: list[int], step_min: float = 5.0) -> float:
    t = float(depart_min)
    for e in path:
        t += edge_cost(forecast, e, depart_min, t, step_min)
    return t


def history_window(sim, window: int = 12) -> np.ndarray:
    """Last ``window`` recorded travel-time rows, padded at the front with free-flow times."""
    s = sim.step_index
    rows = sim.trace_tt[max(0, s - window) : s]
    if len(rows) < window:
        pad = np.repeat(sim.net.free_flow[None, :], window - len(rows), axis=0)
        rows = np.concatenate([pad, rows], axis=0) if len(rows) else pad
    return rows


def stpm_forecaster(params) -> Forecaster:
    """Forecaster backed by a trained STPM checkpoint."""
    from .stpm import stpm_forward

    def f(sim) -> np.ndarray:
        return stpm_forward(params, history_window(sim), sim.net)

    return f


def oracle_forecaster(field: np.ndarray, step_min: float = 5.0, horizon: int = 12) -> Forecaster:
    """Forecaster that reads a known future field (T, E), e.g. a recorded dry run."""

    def f(sim) -> np.ndarray:
        s = sim.step_index
        rows = field[s : s + horizon]
        if len(rows) < horizon:
            rows = np.concatenate([rows, np.repeat(field[-1:], horizon - len(rows), axis=0)], axis=0)
        return rows

    return f


class PredictiveRouter:
    """Plans on forecasts and re-plans every ``reroute_min`` while a truck travels.

    ``rolling=False`` keeps the first plan for the whole trip.
    """

    def __init__(self, forecaster: Forecaster, rolling: bool = True):
        self.forecaster = forecaster
        self.rolling = rolling
        self.plans: list[tuple[float, int, int, list[int], float]] = []

    def forecast(self, sim) -> np.ndarray:
        fc = np.array(self.forecaster(sim), dtype=np.float64)
        fc[:, sim.closed] = np.inf
        return fc

    def plan(self, sim, origin: int, dest: int, depart_min: float | None = None) -> list[int]:
        net = sim.net
        t0 = sim.clock_min if depart_min is None else depart_min
        path, arrival = plan_route(
            net, self.forecast(sim), t0, net.node_ids[origin], net.node_ids[dest], sim.dt, forecast_start_min=sim.clock_min
        )
        self.plans.append((t0, origin, dest, path, arrival))
        return path


def rolling_update(sim, truck, router: PredictiveRouter) -> list[int]:
    """Re-plan a traveling truck's remaining route; mid-edge trucks finish the current edge first."""
    sim._replan(truck)
    return truck.route[truck.pos :]


def make_router(forecaster: Forecaster | None, no_reroute: bool = False):
    """Predictive rolling router, or the snapshot router when re-routing is off or no forecaster exists."""
    from .simulator import SnapshotRouter

    if no_reroute or forecaster is None:
        return SnapshotRouter()
    return PredictiveRouter(forecaster, rolling=True)
