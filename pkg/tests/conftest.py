from __future__ import annotations

import numpy as np
import pytest

from evacharge.network import Edge, RoadNetwork


def make_net(edge_list, stations=None, zones=None, n_nodes=None):
    """Network from (tail, head, free-flow min) triples; km = minutes, capacity 1000."""
    nodes_used = {n for t, h, *_ in edge_list for n in (t, h)}
    if n_nodes is not None:
        nodes_used |= set(range(n_nodes))
    nodes = {n: (float(n), 0.0) for n in sorted(nodes_used)}
    edges = [Edge(k, t, h, float(rest[0]), float(rest[0]), 1000.0) for k, (t, h, *rest) in enumerate(edge_list)]
    if zones is None:
        zones = {n: "A" for n in nodes}
        zones[max(nodes)] = "safe"
    return RoadNetwork(nodes, edges, stations or [min(nodes)], zones)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def micro_scenario(n_stations: int = 1, households: int = 0, trucks: int = 0, chargers: int = 1, kappa: float = 0.0, **epochs):
    """Line network 0 - 1 - ... - n (safe), a station with ``chargers`` on each of nodes 0..n-1."""
    from evacharge.scenario import parse_scenario, to_runtime

    n = n_stations
    nodes = [{"id": i, "x": float(i), "y": 0.0, "zone": "A"} for i in range(n)] + [{"id": n, "x": float(n), "y": 0.0, "zone": "safe"}]
    edges = []
    for i in range(n):
        edges.append({"id": len(edges), "tail": i, "head": i + 1, "length_km": 5.0, "free_flow_min": 5.0, "capacity_vph": 5000.0})
        edges.append({"id": len(edges), "tail": i + 1, "head": i, "length_km": 5.0, "free_flow_min": 5.0, "capacity_vph": 5000.0})
    doc = {
        "name": "micro",
        "network": {"nodes": nodes, "edges": edges, "stations": [{"node": i, "chargers": chargers} for i in range(n)]},
        "hazard": {"kappa": kappa},
        "demand": {"households": {"A": households, "B": 0, "C": 0}, "compliance": 1.0, "ev_share": 1.0},
        "fleet": {"trucks": trucks, "start_nodes": [0] if trucks else []},
        "epochs": epochs,
    }
    return to_runtime(parse_scenario(doc))


# filled by tests/test_acceptance.py, printed after the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
