from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from evacharge.autodiff import ShapeError, Tensor, gradcheck
from evacharge.network import line_graph_adjacency
from evacharge.scenario import load_scenario
from evacharge.stpm import (
    StpmConfig,
    TrafficDataset,
    dynamic_gcn,
    generate_training_data,
    init_stpm,
    persistence_mse,
    scenario_split,
    spatial_weights,
    stpm_forward,
    stpm_loss,
    temporal_attention,
    train_stpm,
)
from conftest import make_net
from oracles import dynamic_gcn_scalar, temporal_attention_scalar

SMALL = StpmConfig(d_model=8, heads=2, layers=1)


def chain3():
    # three edges 0->1->2->3: line graph is a chain
    return make_net([(0, 1, 5.0), (1, 2, 4.0), (2, 3, 6.0)])


def test_dynamic_gcn_single_edge():
    rng = np.random.default_rng(0)
    h = rng.normal(size=(1, 4))
    w = rng.normal(size=(4, 4))
    out = dynamic_gcn(Tensor(h), np.ones((1, 1)), np.ones((1, 1)), Tensor(w)).value
    assert np.allclose(out, np.maximum(h @ w, 0.0), atol=1e-12)
    assert np.allclose(spatial_weights(h), [[1.0]])


def test_dynamic_gcn_non_adjacent_rows_independent():
    rng = np.random.default_rng(1)
    h = rng.normal(size=(2, 4))
    w = rng.normal(size=(4, 4))
    eye = np.eye(2)
    out = dynamic_gcn(Tensor(h), eye, eye, Tensor(w)).value
    for i in range(2):
        alone = dynamic_gcn(Tensor(h[i : i + 1]), np.ones((1, 1)), np.ones((1, 1)), Tensor(w)).value
        assert np.allclose(out[i], alone[0], atol=1e-12)


def test_dynamic_gcn_chain_matches_scalar():
    net = chain3()
    adj, deg = line_graph_adjacency(net)
    rng = np.random.default_rng(2)
    h = rng.normal(size=(3, 4))
    w = rng.normal(size=(4, 5))
    for mode in ("neighborhood", "full"):
        out = dynamic_gcn(Tensor(h), adj, deg, Tensor(w), softmax=mode).value
        ref = dynamic_gcn_scalar(h.tolist(), adj.tolist(), w.tolist(), neighborhood=mode == "neighborhood")
        assert np.allclose(out, ref, atol=1e-12)


def test_dynamic_gcn_shape_error():
    with pytest.raises(ShapeError):
        dynamic_gcn(Tensor(np.zeros((3, 4))), np.eye(2), np.eye(2), Tensor(np.zeros((4, 4))))


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (5, 6), elements=st.floats(-20, 20)))
def test_spatial_weight_rows_sum_to_one(h):
    s = spatial_weights(h)
    assert np.all(np.abs(s.sum(axis=1) - 1.0) <= 1e-12)
    adj = (np.arange(5)[:, None] - np.arange(5)[None, :]) % 5 <= 1
    s = spatial_weights(h, adj, "neighborhood")
    assert np.all(s[~adj] == 0.0)
    assert np.all(np.abs(s.sum(axis=1) - 1.0) <= 1e-12)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, 4, elements=st.floats(-5, 5)))
def test_gcn_ignores_non_adjacent_edges(delta):
    # edges 0->1, 1->2 are adjacent; edge 3->4 is not adjacent to edge 0
    net = make_net([(0, 1, 5.0), (1, 2, 5.0), (3, 4, 5.0)])
    adj, deg = line_graph_adjacency(net)
    rng = np.random.default_rng(3)
    h = rng.normal(size=(3, 4))
    w = Tensor(rng.normal(size=(4, 4)))
    base = dynamic_gcn(Tensor(h), adj, deg, w).value
    h2 = h.copy()
    h2[2] += delta
    moved = dynamic_gcn(Tensor(h2), adj, deg, w).value
    assert np.array_equal(base[:2], moved[:2])


def _attn_params(rng, d):
    return [Tensor(rng.normal(size=s) * 0.5) for s in [(3, d, d), (3, d, d), (d, d), (d, d)]]


def test_temporal_attention_single_step():
    rng = np.random.default_rng(4)
    z = rng.normal(size=(1, 4))
    pq, pk, wv, wo = _attn_params(rng, 4)
    out = temporal_attention(Tensor(z), pq, pk, wv, wo, 2).value
    assert np.allclose(out, z @ wv.value @ wo.value, atol=1e-12)


def test_temporal_attention_constant_input_constant_output():
    rng = np.random.default_rng(5)
    z = np.repeat(rng.normal(size=(1, 8)), 6, axis=0)
    pq, pk, wv, wo = _attn_params(rng, 8)
    out = temporal_attention(Tensor(z), pq, pk, wv, wo, 2).value
    assert np.allclose(out, out[0][None], atol=1e-12)


def test_temporal_attention_matches_scalar():
    rng = np.random.default_rng(6)
    z = rng.normal(size=(4, 8))
    pq, pk, wv, wo = _attn_params(rng, 8)
    out = temporal_attention(Tensor(z), pq, pk, wv, wo, 2).value
    ref = temporal_attention_scalar(z.tolist(), pq.value.tolist(), pk.value.tolist(), wv.value.tolist(), wo.value.tolist(), 2)
    assert np.allclose(out, ref, atol=1e-12)


def test_default_config_dimensions():
    cfg = StpmConfig()
    assert (cfg.d_model, cfg.heads, cfg.window, cfg.horizon) == (64, 8, 12, 12)
    ps = init_stpm(3, cfg)
    assert ps["l0.phi_q"].shape == (3, 64, 64)


def test_zero_head_forecasts_free_flow():
    net = chain3()
    ps = init_stpm(net.n_edges, SMALL, seed=1)
    for name in ("out.w", "out.b", "skip.w"):
        ps[name].value[...] = 0.0
    window = net.free_flow[None, :] * (1.0 + np.random.default_rng(7).random((12, 3)))
    fc = stpm_forward(ps, window, net)
    assert fc.shape == (12, 3)
    assert np.array_equal(fc, np.repeat(net.free_flow[None, :], 12, axis=0))


@settings(max_examples=15, deadline=None)
@given(arrays(np.float64, (12, 3), elements=st.floats(1.0, 4.0)), st.integers(0, 50))
def test_forecast_never_below_free_flow_and_deterministic(scale, seed):
    net = chain3()
    ps = init_stpm(net.n_edges, SMALL, seed=seed)
    ps["out.b"].value[...] = -5.0
    window = net.free_flow[None, :] * scale
    fc = stpm_forward(ps, window, net)
    assert np.all(fc >= net.free_flow[None, :])
    assert np.array_equal(fc, stpm_forward(ps, window, net))


def test_closed_links_are_capped_before_input():
    net = chain3()
    ps = init_stpm(net.n_edges, SMALL, seed=2)
    window = np.repeat(net.free_flow[None, :] * 1.5, 12, axis=0)
    window[6:, 1] = np.inf
    fc = stpm_forward(ps, window, net)
    assert np.all(np.isfinite(fc))


def test_stpm_loss_gradcheck():
    net = chain3()
    adj, deg = line_graph_adjacency(net)
    cfg = StpmConfig(d_model=4, heads=2, layers=1, window=4, horizon=2)
    ps = init_stpm(net.n_edges, cfg, seed=3)
    rng = np.random.default_rng(8)
    for p in ps.params.values():
        p.value = p.value + rng.normal(scale=0.1, size=p.shape)
    x = rng.random((2, 4, 3))
    y = rng.random((2, 2, 3))
    assert gradcheck(lambda: stpm_loss(ps, x, y, adj, deg), ps.params.values()) < 1e-4


def _series_dataset(series, ff, test):
    return TrafficDataset(np.asarray(ff, dtype=np.float64), np.asarray(series, dtype=np.float64), np.asarray(test, dtype=bool))


def test_sliding_window_count_for_one_48h_episode():
    ds = _series_dataset(np.ones((1, 576, 2)), [1.0, 1.0], [False])
    assert ds.n_windows_per_series == 553
    assert len(ds.window_index("train")) == 553


def test_split_is_by_scenario():
    test = scenario_split(10, 0.2, seed=4)
    assert test.sum() == 2
    ds = _series_dataset(np.ones((10, 30, 2)), [1.0, 1.0], test)
    tr = {tuple(r) for r in ds.window_index("train")}
    te = {tuple(r) for r in ds.window_index("test")}
    assert not tr & te
    assert {i for i, _ in tr}.isdisjoint({i for i, _ in te})


def test_generation_is_deterministic_and_roundtrips(tmp_path):
    sc = load_scenario("tiny")
    a = generate_training_data([sc], 2, seeds=[3, 4])
    b = generate_training_data([sc], 2, seeds=[3, 4])
    assert a.series.shape == (2, sc.epochs.n_steps, sc.network.n_edges)
    assert np.array_equal(a.series, b.series)
    a.save(tmp_path / "d.stpd")
    c = TrafficDataset.load(tmp_path / "d.stpd")
    assert np.array_equal(c.series, a.series) and np.array_equal(c.test, a.test)
    assert (tmp_path / "d.stpd").read_bytes() == _save_bytes(b, tmp_path / "e.stpd")


def _save_bytes(ds, path):
    ds.save(path)
    return path.read_bytes()


def test_zero_epochs_returns_init():
    net = chain3()
    ds = _series_dataset(np.repeat(net.free_flow[None, None, :], 2, axis=0).repeat(30, axis=1), net.free_flow, [False, True])
    res = train_stpm(ds, net, 0, cfg=SMALL, seed=5)
    init = init_stpm(net.n_edges, SMALL, seed=5)
    assert res.log == []
    for k in init.params:
        assert np.array_equal(res.params[k].value, init[k].value)


def _propagation_dataset(net, n=6, steps=60, seed=0):
    # a congestion wave moving down the chain, one edge per 3 steps
    rng = np.random.default_rng(seed)
    series = []
    for _ in range(n):
        s = np.repeat(net.free_flow[None, :], steps, axis=0).copy()
        for start in rng.integers(0, steps - 10, size=3):
            amp = rng.uniform(0.5, 2.0)
            for e in range(net.n_edges):
                t0 = start + 3 * e
                s[t0 : t0 + 6, e] *= 1.0 + amp
        series.append(s)
    return _series_dataset(series, net.free_flow, scenario_split(n, 0.2, seed))


def test_training_lowers_loss_after_50_epochs():
    net = chain3()
    ds = _propagation_dataset(net)
    res = train_stpm(ds, net, 50, lr=0.001, cfg=SMALL, seed=6, batch=16, steps_per_epoch=4)
    assert res.log[-1]["train_loss"] < res.log[0]["train_loss"]
    assert min(r["val_loss"] for r in res.log) < res.log[0]["val_loss"]


def test_constant_traffic_is_learned():
    net = chain3()
    levels = np.array([0.2, 1.0, 2.5])
    s = np.tile(net.free_flow * (1.0 + levels), (3, 40, 1))
    ds = _series_dataset(s, net.free_flow, [False, False, True])
    res = train_stpm(ds, net, 60, lr=0.01, cfg=SMALL, seed=7, batch=16, steps_per_epoch=4)
    adj, deg = line_graph_adjacency(net)
    x, y, _ = ds.batch(ds.window_index("test")[:8])
    mse = float(stpm_loss(res.params, x, y, adj, deg).value)
    assert mse < 1e-2 * float(np.var(levels))


def test_persistence_mse_counts_finite_entries():
    ds = _series_dataset([[[1.0]] * 24 + [[2.0]] * 6], [1.0], [True])
    # one window per start t=0..6; targets after a step-change from 1 to 2
    assert ds.n_windows_per_series == 7
    want = np.mean([np.mean(((ds.series[0, t + 12 : t + 24, 0]) - ds.series[0, t + 11, 0]) ** 2) for t in range(7)])
    assert persistence_mse(ds) == pytest.approx(want, abs=1e-12)
