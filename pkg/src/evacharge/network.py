"""Directed road network, volume-delay travel times and shortest paths.

Travel times are in minutes, lengths in km, capacities in veh/h.  A closed
link carries the sentinel ``UNREACHABLE`` (``inf``) in a travel-time snapshot
instead of being deleted, so scenario toggles never mutate the topology.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse.csgraph import csgraph_from_dense, dijkstra

UNREACHABLE = float("inf")
ZONES = ("A", "B", "C", "safe")

BPR_ALPHA = 0.15
BPR_BETA = 4


class Unreachable(Exception):
    """No finite-cost path between two nodes."""


class NetworkError(ValueError):
    pass


@dataclass(frozen=True)
class Edge:
    id: int
    tail: int
    head: int
    length_km: float
    free_flow_min: float
    capacity_vph: float


@dataclass
class RoadNetwork:
    nodes: dict[int, tuple[float, float]]
    edges: list[Edge]
    stations: list[int]
    zones: dict[int, str]
    station_chargers: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        for pos, e in enumerate(self.edges):
            if e.id != pos:
                raise NetworkError(f"edge ids must be 0..|E|-1 in order, got {e.id} at {pos}")
            if e.tail not in self.nodes or e.head not in self.nodes:
                raise NetworkError(f"edge {e.id} references unknown node")
            if e.length_km <= 0 or e.free_flow_min <= 0 or e.capacity_vph <= 0:
                raise NetworkError(f"edge {e.id} needs positive length, free-flow time and capacity")
        if not self.stations:
            raise NetworkError("station set is empty")
        for s in self.stations:
            if s not in self.nodes:
                raise NetworkError(f"station node {s} does not exist")
        if len(set(self.stations)) != len(self.stations):
            raise NetworkError("duplicate station node")
        for n, z in self.zones.items():
            if z not in ZONES:
                raise NetworkError(f"node {n} has unknown zone {z!r}")
        if "safe" not in self.zones.values():
            raise NetworkError("no node is labeled safe")
        if not self.station_chargers:
            self.station_chargers = [1] * len(self.stations)
        if len(self.station_chargers) != len(self.stations):
            raise NetworkError("one charger count per station required")

        # dense node indexing for array work
        self.node_ids = sorted(self.nodes)
        self.node_index = {n: k for k, n in enumerate(self.node_ids)}
        self.tails = np.array([self.node_index[e.tail] for e in self.edges], dtype=np.int64)
        self.heads = np.array([self.node_index[e.head] for e in self.edges], dtype=np.int64)
        self.free_flow = np.array([e.free_flow_min for e in self.edges], dtype=np.float64)
        self.lengths = np.array([e.length_km for e in self.edges], dtype=np.float64)
        self.capacity = np.array([e.capacity_vph for e in self.edges], dtype=np.float64)
        # outgoing edge ids per node index, ascending id
        self.out_edges: list[list[int]] = [[] for _ in self.node_ids]
        for e in self.edges:
            self.out_edges[self.node_index[e.tail]].append(e.id)

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def n_stations(self) -> int:
        return len(self.stations)

    def zone_of(self, node: int) -> str:
        return self.zones.get(node, "safe")

    def safe_nodes(self) -> list[int]:
        return sorted(n for n, z in self.zones.items() if z == "safe")

    def free_flow_snapshot(self, closed: Iterable[int] = ()) -> np.ndarray:
        snap = self.free_flow.copy()
        for e in closed:
            snap[e] = UNREACHABLE
        return snap


def line_graph_adjacency(net: RoadNetwork) -> tuple[np.ndarray, np.ndarray]:
    """Edge adjacency (head(e1) == tail(e2), plus self loops) and its degree matrix."""
    a = (net.heads[:, None] == net.tails[None, :]).astype(np.float64)
    np.fill_diagonal(a, 1.0)
    d = np.diag(a.sum(axis=1))
    return a, d


def congested_travel_time(free_flow_min, capacity_vph, flow_vph):
    """BPR volume-delay: t0 * (1 + 0.15 (flow/capacity)^4).  Works on scalars or arrays."""
    ratio = np.asarray(flow_vph, dtype=np.float64) / np.asarray(capacity_vph, dtype=np.float64)
    t = np.asarray(free_flow_min, dtype=np.float64) * (1.0 + BPR_ALPHA * ratio**BPR_BETA)
    return float(t) if np.ndim(t) == 0 else t


def _dense_weights(net: RoadNetwork, costs: np.ndarray) -> np.ndarray:
    w = np.full((net.n_nodes, net.n_nodes), np.inf)
    finite = np.isfinite(costs)
    # parallel edges: keep the cheapest
    np.minimum.at(w, (net.tails[finite], net.heads[finite]), costs[finite])
    return w


def distance_matrix(net: RoadNetwork, costs: Sequence[float]) -> np.ndarray:
    """All-pairs min cost (node-index space); ``inf`` where unreachable."""
    costs = np.asarray(costs, dtype=np.float64)
    graph = csgraph_from_dense(_dense_weights(net, costs), null_value=np.inf)
    return dijkstra(graph, directed=True)


def _tight(a: float, b: float) -> bool:
    return abs(a - b) <= 1e-9 * max(1.0, abs(a), abs(b))


def path_from_distances(net: RoadNetwork, costs: np.ndarray, dist: np.ndarray, origin: int, dest: int) -> list[int]:
    """Lexicographically smallest min-cost edge sequence, rebuilt from a distance matrix.

    Walking forward from the origin and always taking the smallest edge id that
    stays on a min-cost path yields the lexicographic minimum because costs are
    strictly positive (no min-cost path is a prefix of another to the same node).
    """
    o, d = net.node_index[origin], net.node_index[dest]
    if not np.isfinite(dist[o, d]):
        raise Unreachable(f"{origin} -> {dest}")
    path: list[int] = []
    u = o
    while u != d:
        for e in net.out_edges[u]:
            c = costs[e]
            if not np.isfinite(c):
                continue
            w = net.heads[e]
            if np.isfinite(dist[w, d]) and _tight(c + dist[w, d], dist[u, d]):
                path.append(e)
                u = w
                break
        else:  # pragma: no cover - guarded by the distance check
            raise Unreachable(f"{origin} -> {dest}")
    return path


def shortest_path(net: RoadNetwork, snapshot: Sequence[float], origin: int, dest: int) -> tuple[list[int], float]:
    """Dijkstra over snapshot costs; returns (edge ids, minutes).

    Raises ``Unreachable`` when the destination is cut off.
    """
    costs = np.asarray(snapshot, dtype=np.float64)
    if origin == dest:
        return [], 0.0
    dist = distance_matrix(net, costs)
    path = path_from_distances(net, costs, dist, origin, dest)
    return path, float(sum(costs[e] for e in path))


def path_length_km(net: RoadNetwork, path: Sequence[int]) -> float:
    return float(sum(net.lengths[e] for e in path))
