from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_net
from evacharge.network import (
    Edge,
    NetworkError,
    RoadNetwork,
    Unreachable,
    congested_travel_time,
    line_graph_adjacency,
    shortest_path,
)


def test_line_graph_single_edge():
    a, d = line_graph_adjacency(make_net([(0, 1, 5)]))
    assert a.tolist() == [[1.0]]
    assert d.tolist() == [[1.0]]


def test_line_graph_chain():
    a, _ = line_graph_adjacency(make_net([(0, 1, 5), (1, 2, 5)]))
    assert a[0, 1] == 1.0
    assert a[1, 0] == 0.0


def test_line_graph_three_cycle():
    a, d = line_graph_adjacency(make_net([(0, 1, 5), (1, 2, 5), (2, 0, 5)]))
    assert (a.sum(axis=1) == 2).all()
    assert np.diag(d).tolist() == [2.0, 2.0, 2.0]


def test_bpr_examples():
    assert congested_travel_time(10.0, 100.0, 0.0) == 10.0
    assert congested_travel_time(10.0, 100.0, 100.0) == pytest.approx(11.5, abs=1e-12)
    assert congested_travel_time(10.0, 100.0, 200.0) == pytest.approx(34.0, abs=1e-12)


@given(st.floats(0, 1e4), st.floats(0, 1e4), st.floats(0.1, 60), st.floats(10, 5000))
def test_bpr_monotone(f1, f2, t0, cap):
    lo, hi = sorted((f1, f2))
    assert congested_travel_time(t0, cap, lo) <= congested_travel_time(t0, cap, hi)
    assert congested_travel_time(t0, cap, lo) >= t0


def test_shortest_path_trivial_cases():
    net = make_net([(0, 1, 7), (0, 1, 5)])
    assert shortest_path(net, net.free_flow, 0, 0) == ([], 0.0)
    assert shortest_path(net, net.free_flow, 0, 1) == ([1], 5.0)


def test_shortest_path_diamond():
    net = make_net([(0, 1, 2), (1, 3, 2), (0, 2, 1), (2, 3, 4)])
    path, cost = shortest_path(net, net.free_flow, 0, 3)
    assert cost == 4.0
    assert path == [0, 1]


def test_shortest_path_ties_lexicographic():
    net = make_net([(0, 2, 1), (2, 3, 1), (0, 1, 1), (1, 3, 1)])
    path, _ = shortest_path(net, net.free_flow, 0, 3)
    assert path == [0, 1]


def test_unreachable_and_closed_sentinel():
    net = make_net([(0, 1, 3), (1, 2, 3)])
    with pytest.raises(Unreachable):
        shortest_path(net, net.free_flow, 2, 0)
    with pytest.raises(Unreachable):
        shortest_path(net, net.free_flow_snapshot(closed=[1]), 0, 2)


def test_network_validation():
    nodes = {0: (0.0, 0.0), 1: (1.0, 0.0)}
    with pytest.raises(NetworkError):
        RoadNetwork(nodes, [Edge(0, 0, 5, 1.0, 1.0, 1.0)], [0], {1: "safe"})
    with pytest.raises(NetworkError):
        RoadNetwork(nodes, [Edge(0, 0, 1, 0.0, 1.0, 1.0)], [0], {1: "safe"})
    with pytest.raises(NetworkError):
        RoadNetwork(nodes, [Edge(0, 0, 1, 1.0, 1.0, 1.0)], [], {1: "safe"})
    with pytest.raises(NetworkError):
        RoadNetwork(nodes, [Edge(0, 0, 1, 1.0, 1.0, 1.0)], [0], {1: "A"})


@st.composite
def small_graphs(draw):
    n = draw(st.integers(2, 7))
    pairs = [(a, b) for a in range(n) for b in range(n) if a != b]
    chosen = draw(st.lists(st.sampled_from(pairs), min_size=1, max_size=14))
    costs = draw(st.lists(st.integers(1, 20), min_size=len(chosen), max_size=len(chosen)))
    return n, [(a, b, c) for (a, b), c in zip(chosen, costs)]


def _brute_min(n, edges, o, d):
    best = np.inf
    for k in range(0, n - 1):
        for mid in itertools.permutations([v for v in range(n) if v not in (o, d)], k):
            seq = (o, *mid, d)
            total = 0.0
            for u, v in zip(seq, seq[1:]):
                c = [cost for a, b, cost in edges if a == u and b == v]
                if not c:
                    break
                total += min(c)
            else:
                best = min(best, total)
    return best


@settings(max_examples=60, deadline=None)
@given(small_graphs(), st.data())
def test_shortest_path_matches_enumeration(graph, data):
    n, edges = graph
    net = make_net(edges, n_nodes=n)
    o = data.draw(st.integers(0, n - 1))
    d = data.draw(st.integers(0, n - 1))
    if o == d:
        return
    brute = _brute_min(n, edges, o, d)
    if not np.isfinite(brute):
        with pytest.raises(Unreachable):
            shortest_path(net, net.free_flow, o, d)
        return
    path, cost = shortest_path(net, net.free_flow, o, d)
    assert cost == pytest.approx(brute)
    # path is contiguous and starts/ends right
    assert net.edges[path[0]].tail == o and net.edges[path[-1]].head == d
    for a, b in zip(path, path[1:]):
        assert net.edges[a].head == net.edges[b].tail


@settings(max_examples=60, deadline=None)
@given(small_graphs(), st.data())
def test_removing_edges_never_shortens(graph, data):
    n, edges = graph
    net = make_net(edges, n_nodes=n)
    o, d = data.draw(st.integers(0, n - 1)), data.draw(st.integers(0, n - 1))
    closed = data.draw(st.lists(st.integers(0, len(edges) - 1), max_size=3))

    def cost(snap):
        try:
            return shortest_path(net, snap, o, d)[1]
        except Unreachable:
            return np.inf

    assert cost(net.free_flow_snapshot(closed)) >= cost(net.free_flow)


@settings(max_examples=40, deadline=None)
@given(small_graphs())
def test_line_graph_degree_is_row_sum(graph):
    n, edges = graph
    a, d = line_graph_adjacency(make_net(edges, n_nodes=n))
    assert np.array_equal(np.diag(d), a.sum(axis=1))
    assert (np.diag(d) >= 1).all()
    assert set(np.unique(a)) <= {0.0, 1.0}
