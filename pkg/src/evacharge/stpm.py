"""Spatio-temporal travel-time predictor over the edge line graph.

Inputs and targets are relative delays ``t / t0 - 1`` per edge.  A window of
12 past steps is projected to d_model, passed through L layers of
(residual dynamic graph convolution, residual temporal attention), and read
out by a per-edge head over the flattened sequence plus a linear skip from
the raw history.  Forecast minutes are ``t0 * (1 + y)`` clamped at ``t0``.

Batches are packed as (B*T, E, d) for spatial work and (B*E, T, d) for
temporal work so every tensor stays rank 3.

Dataset file (integers uint32 little-endian)::

    b"STPD" | version | n_series | n_steps | n_edges | window | horizon
    test flags (n_series uint32) | free-flow (n_edges float64)
    series (n_series * n_steps * n_edges float64, row-major)
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tensor
from .network import RoadNetwork, line_graph_adjacency

WINDOW = 12
HORIZON = 12
CLOSED_CAP_FACTOR = 3.0
DATA_MAGIC = b"STPD"
DATA_VERSION = 1


@dataclass(frozen=True)
class StpmConfig:
    d_model: int = 64
    heads: int = 8
    layers: int = 2
    window: int = WINDOW
    horizon: int = HORIZON
    softmax: str = "neighborhood"  # or "full"


# -------------------------------------------------------------------- layers
def dynamic_gcn(h: Tensor, adjacency: np.ndarray, degree: np.ndarray, w: Tensor, softmax: str = "neighborhood") -> Tensor:
    """ReLU(((D^-1 A) * S) H W) with S = softmax(H H^T / sqrt(d)) per row; h is (N, E, d).

    The default ``softmax="neighborhood"`` restricts the softmax to line-graph
    neighbours so an edge's output ignores non-adjacent edges entirely;
    ``"full"`` normalizes over every edge before masking.
    """
    if h.ndim == 2:
        return ad.reshape(dynamic_gcn(ad.reshape(h, (1, *h.shape)), adjacency, degree, w, softmax), h.shape[:1] + (w.shape[1],))
    N, E, d = h.shape
    if adjacency.shape != (E, E):
        raise ad.ShapeError(f"adjacency {adjacency.shape} vs {E} edges")
    scores = ad.scale(ad.matmul(h, ad.swap_last(h)), 1.0 / np.sqrt(d))
    mask = (adjacency > 0)[None] if softmax == "neighborhood" else None
    s = ad.masked_softmax(scores, mask)
    norm = adjacency / np.diag(degree)[:, None]
    agg = ad.mul(s, norm[None])
    return ad.relu(ad.matmul(ad.matmul(agg, h), w))


def spatial_weights(h: np.ndarray, adjacency: np.ndarray | None = None, softmax: str = "full") -> np.ndarray:
    """The dynamic spatial weight matrix S for a single (E, d) representation."""
    mask = None if softmax == "full" else adjacency > 0
    return ad.masked_softmax(Tensor(h @ h.T / np.sqrt(h.shape[1])), mask).value


def temporal_attention(z: Tensor, phi_q: Tensor, phi_k: Tensor, w_v: Tensor, w_o: Tensor, heads: int) -> Tensor:
    """Multi-head attention across time; queries and keys come from width-3 temporal convolutions.

    ``z`` is (N, T, d); ``phi_q``/``phi_k`` are (3, d, d) kernels.
    """
    if z.ndim == 2:
        return ad.reshape(temporal_attention(ad.reshape(z, (1, *z.shape)), phi_q, phi_k, w_v, w_o, heads), z.shape)
    q = ad.split_heads(ad.conv1d_time(z, phi_q), heads)
    k = ad.split_heads(ad.conv1d_time(z, phi_k), heads)
    v = ad.split_heads(ad.matmul(z, w_v), heads)
    out, _ = ad.attention(q, k, v)
    return ad.matmul(ad.merge_heads(out, heads), w_o)


# -------------------------------------------------------------------- model
def init_stpm(n_edges: int, cfg: StpmConfig = StpmConfig(), seed: int = 0) -> ParamStore:
    d = cfg.d_model
    ps = ParamStore(
        f"glorot-uniform seed={seed} d={d} heads={cfg.heads} layers={cfg.layers} window={cfg.window} "
        f"horizon={cfg.horizon} edges={n_edges} softmax={cfg.softmax}",
        seed=seed,
    )
    ps.glorot("in.w", (1, d))
    ps.zeros("in.b", (d,))
    ps.add("pos", ps._rng.normal(0.0, 0.1, size=(cfg.window, d)))
    ps.add("edge", ps._rng.normal(0.0, 0.1, size=(n_edges, d)))
    for l in range(cfg.layers):
        ps.glorot(f"l{l}.gcn.w", (d, d))
        ps.glorot(f"l{l}.phi_q", (3, d, d))
        ps.glorot(f"l{l}.phi_k", (3, d, d))
        ps.glorot(f"l{l}.w_v", (d, d))
        ps.glorot(f"l{l}.w_o", (d, d))
    ps.glorot("out.w", (cfg.window * d, cfg.horizon), gain=0.1)
    ps.zeros("out.b", (cfg.horizon,))
    ps.zeros("skip.w", (cfg.window, cfg.horizon))
    return ps


def config_of(ps: ParamStore) -> StpmConfig:
    kv = dict(p.split("=", 1) for p in ps.init.split() if "=" in p)
    return StpmConfig(
        d_model=int(kv.get("d", 64)),
        heads=int(kv.get("heads", 8)),
        layers=int(kv.get("layers", 2)),
        window=int(kv.get("window", WINDOW)),
        horizon=int(kv.get("horizon", HORIZON)),
        softmax=kv.get("softmax", "neighborhood"),
    )


def stpm_predict_ratio(ps: ParamStore, x: np.ndarray, adjacency: np.ndarray, degree: np.ndarray, cfg: StpmConfig | None = None) -> Tensor:
    """Forecast relative delays (B, E, horizon) from history ratios x (B, T, E)."""
    cfg = cfg or config_of(ps)
    x = np.asarray(x, dtype=np.float64)
    B, T, E = x.shape
    d = cfg.d_model
    h = ad.linear(Tensor(x.reshape(B * T, E, 1)), ps["in.w"], ps["in.b"])  # (B*T, E, d)
    h = ad.add(h, ps["edge"])
    # time-position embedding, shared across edges
    h = ad.add(ad.reshape(h, (B, T, E * d)), _tile_pos(ps["pos"], E))
    h = ad.reshape(h, (B * T, E, d))
    for l in range(cfg.layers):
        h = ad.add(h, dynamic_gcn(h, adjacency, degree, ps[f"l{l}.gcn.w"], cfg.softmax))
        z = ad.swap_groups(h, B)  # (B*E, T, d)
        z = ad.add(z, temporal_attention(z, ps[f"l{l}.phi_q"], ps[f"l{l}.phi_k"], ps[f"l{l}.w_v"], ps[f"l{l}.w_o"], cfg.heads))
        h = ad.swap_groups(z, B)
    z = ad.swap_groups(h, B)  # (B*E, T, d)
    flat = ad.reshape(z, (B * E, T * d))
    hist = x.transpose(0, 2, 1).reshape(B * E, T)
    y = ad.add(ad.linear(flat, ps["out.w"], ps["out.b"]), ad.matmul(Tensor(hist), ps["skip.w"]))
    return ad.reshape(y, (B, E, cfg.horizon))


def _tile_pos(pos: Tensor, E: int) -> Tensor:
    """(T, d) -> (1, T, E*d) repeating each time row across edges."""
    T, d = pos.shape
    rep = ad.concat([pos] * E, axis=1)  # (T, E*d)
    return ad.reshape(rep, (1, T, E * d))


def to_ratio(tt: np.ndarray, free_flow: np.ndarray) -> np.ndarray:
    """Relative delay with closed (infinite) links capped at 3x the largest finite value seen."""
    tt = np.asarray(tt, dtype=np.float64)
    finite = np.isfinite(tt)
    r = np.where(finite, tt / free_flow - 1.0, 0.0)
    if not finite.all():
        peak = (1.0 + r[finite].max()) if finite.any() else 1.0
        r = np.where(finite, r, CLOSED_CAP_FACTOR * peak - 1.0)
    return r


def stpm_forward(ps: ParamStore, window: np.ndarray, net: RoadNetwork) -> np.ndarray:
    """Forecast (horizon, E) minutes from a (T, E) history window of minutes."""
    adj, deg = line_graph_adjacency(net)
    x = to_ratio(window, net.free_flow)[None]
    y = stpm_predict_ratio(ps, x, adj, deg).value[0].T  # (horizon, E)
    return np.maximum(net.free_flow[None, :] * (1.0 + y), net.free_flow[None, :])


def stpm_loss(ps: ParamStore, x: np.ndarray, y: np.ndarray, adjacency: np.ndarray, degree: np.ndarray) -> Tensor:
    """MSE in relative-delay space; x is (B, T, E), y is (B, horizon, E)."""
    pred = stpm_predict_ratio(ps, x, adjacency, degree)
    diff = ad.add(pred, -np.asarray(y).transpose(0, 2, 1))
    return ad.mean(ad.square(diff))


# -------------------------------------------------------------------- data
@dataclass
class TrafficDataset:
    free_flow: np.ndarray
    series: np.ndarray  # (n_series, n_steps, E) minutes
    test: np.ndarray  # (n_series,) bool
    window: int = WINDOW
    horizon: int = HORIZON

    @property
    def n_windows_per_series(self) -> int:
        return self.series.shape[1] - self.window - self.horizon + 1

    def window_index(self, split: str) -> np.ndarray:
        """(series, start) pairs for the train or test split."""
        ids = np.flatnonzero(self.test if split == "test" else ~self.test)
        starts = np.arange(self.n_windows_per_series)
        return np.array([(i, s) for i in ids for s in starts], dtype=np.int64).reshape(-1, 2)

    def batch(self, index: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """History ratios (B, T, E), target ratios (B, horizon, E), target minutes."""
        w, h = self.window, self.horizon
        xs, ys = [], []
        for i, s in index:
            xs.append(self.series[i, s : s + w])
            ys.append(self.series[i, s + w : s + w + h])
        hist = np.stack(xs)
        tgt = np.stack(ys)
        x = np.stack([to_ratio(a, self.free_flow) for a in hist])
        y = np.stack([to_ratio(a, self.free_flow) for a in tgt])
        return x, y, tgt

    def save(self, path: str | Path) -> None:
        n, T, E = self.series.shape
        parts = [DATA_MAGIC, struct.pack("<6I", DATA_VERSION, n, T, E, self.window, self.horizon)]
        parts.append(struct.pack(f"<{n}I", *[int(b) for b in self.test]))
        parts.append(np.ascontiguousarray(self.free_flow, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(self.series, dtype="<f8").tobytes())
        Path(path).write_bytes(b"".join(parts))

    @classmethod
    def load(cls, path: str | Path) -> "TrafficDataset":
        data = Path(path).read_bytes()
        if data[:4] != DATA_MAGIC:
            raise ValueError("not a traffic dataset file")
        version, n, T, E, w, h = struct.unpack_from("<6I", data, 4)
        if version != DATA_VERSION:
            raise ValueError(f"unsupported dataset version {version}")
        pos = 28
        test = np.array(struct.unpack_from(f"<{n}I", data, pos), dtype=bool)
        pos += 4 * n
        ff = np.frombuffer(data, "<f8", E, pos).astype(np.float64)
        pos += 8 * E
        series = np.frombuffer(data, "<f8", n * T * E, pos).astype(np.float64).reshape(n, T, E)
        return cls(ff, series, test, w, h)


def scenario_split(n: int, test_frac: float = 0.2, seed: int = 0) -> np.ndarray:
    """Boolean test mask choosing round(test_frac * n) whole scenarios."""
    n_test = int(round(test_frac * n))
    test = np.zeros(n, dtype=bool)
    test[np.random.default_rng([seed, 17]).permutation(n)[:n_test]] = True
    return test


def generate_training_data(
    scenarios: Sequence,
    n_scenarios: int,
    seeds: Sequence[int] | None = None,
    test_frac: float = 0.2,
    split_seed: int = 0,
) -> TrafficDataset:
    """No-MCT episodes cycling through ``scenarios``; keeps each episode's travel-time field."""
    from .policies import HoldPolicy
    from .simulator import run_episode

    seeds = list(seeds) if seeds is not None else list(range(n_scenarios))
    series = []
    for k in range(n_scenarios):
        sc = scenarios[k % len(scenarios)].with_fleet_size(0)
        series.append(run_episode(sc, HoldPolicy(), seeds[k]).travel_times)
    ff = scenarios[0].network.free_flow.copy()
    return TrafficDataset(ff, np.stack(series), scenario_split(n_scenarios, test_frac, split_seed))


# ------------------------------------------------------------------ training
def persistence_mse(ds: TrafficDataset, split: str = "test") -> float:
    """MSE in minutes of repeating the last observed value over the horizon (finite entries only)."""
    num = 0.0
    cnt = 0
    w, h = ds.window, ds.horizon
    for i in np.flatnonzero(ds.test if split == "test" else ~ds.test):
        s = ds.series[i]
        for t in range(ds.n_windows_per_series):
            last = s[t + w - 1]
            tgt = s[t + w : t + w + h]
            ok = np.isfinite(tgt) & np.isfinite(last)[None]
            num += float(((tgt - last[None]) ** 2)[ok].sum())
            cnt += int(ok.sum())
    return num / max(cnt, 1)


def model_mse(ps: ParamStore, ds: TrafficDataset, adjacency: np.ndarray, degree: np.ndarray, split: str = "test", batch: int = 64, stride: int = 1) -> float:
    """MSE in minutes of the clamped forecast over the split (every ``stride``-th window)."""
    idx = ds.window_index(split)[::stride]
    num = 0.0
    cnt = 0
    for s in range(0, len(idx), batch):
        x, _, tgt = ds.batch(idx[s : s + batch])
        y = stpm_predict_ratio(ps, x, adjacency, degree).value.transpose(0, 2, 1)
        pred = np.maximum(ds.free_flow * (1.0 + y), ds.free_flow)
        ok = np.isfinite(tgt)
        num += float(((pred - tgt) ** 2)[ok].sum())
        cnt += int(ok.sum())
    return num / max(cnt, 1)


def persistence_mse_on(ds: TrafficDataset, split: str = "test", stride: int = 1) -> float:
    """Persistence MSE on the same window subsample ``model_mse`` uses."""
    idx = ds.window_index(split)[::stride]
    num = 0.0
    cnt = 0
    for s in range(0, len(idx), 256):
        _, _, tgt = ds.batch(idx[s : s + 256])
        hist = np.stack([ds.series[i, t + ds.window - 1] for i, t in idx[s : s + 256]])
        ok = np.isfinite(tgt) & np.isfinite(hist)[:, None, :]
        num += float(((tgt - hist[:, None, :]) ** 2)[ok].sum())
        cnt += int(ok.sum())
    return num / max(cnt, 1)


@dataclass
class StpmTrainResult:
    params: ParamStore
    log: list[dict]
    best_epoch: int


def train_stpm(
    ds: TrafficDataset,
    net: RoadNetwork,
    epochs: int,
    lr: float = 0.001,
    cfg: StpmConfig = StpmConfig(),
    seed: int = 0,
    batch: int = 32,
    steps_per_epoch: int | None = None,
    val_frac: float = 0.15,
    val_stride: int = 4,
    time_budget_s: float | None = None,
    log_fn: Callable[[dict], None] | None = None,
) -> StpmTrainResult:
    """Adam on relative-delay MSE; returns the checkpoint with the best validation MSE.

    Validation windows come from a held-out slice of the training scenarios,
    never from the test scenarios.  ``steps_per_epoch`` subsamples windows.
    """
    adj, deg = line_graph_adjacency(net)
    ps = init_stpm(net.n_edges, cfg, seed)
    rng = np.random.default_rng([seed, 23])
    train_ids = np.flatnonzero(~ds.test)
    n_val = max(1, int(round(val_frac * len(train_ids)))) if len(train_ids) > 1 else 0
    perm = rng.permutation(train_ids)
    val_ids, fit_ids = perm[:n_val], perm[n_val:]
    starts = np.arange(ds.n_windows_per_series)
    fit_idx = np.array([(i, s) for i in fit_ids for s in starts], dtype=np.int64).reshape(-1, 2)
    val_idx = np.array([(i, s) for i in val_ids for s in starts[::val_stride]], dtype=np.int64).reshape(-1, 2)
    log: list[dict] = []
    best = (np.inf, -1, ps.copy())
    start = time.monotonic()
    for ep in range(epochs):
        if time_budget_s is not None and time.monotonic() - start > time_budget_s:
            break
        order = rng.permutation(len(fit_idx))
        if steps_per_epoch is not None:
            order = order[: steps_per_epoch * batch]
        total = 0.0
        n = 0
        for s in range(0, len(order), batch):
            x, y, _ = ds.batch(fit_idx[order[s : s + batch]])
            ps.zero_grad()
            loss = stpm_loss(ps, x, y, adj, deg)
            loss.backward()
            ps.adam_step(lr)
            total += float(loss.value)
            n += 1
        val = _val_loss(ps, ds, val_idx, adj, deg) if len(val_idx) else total / max(n, 1)
        row = {"epoch": ep, "train_loss": total / max(n, 1), "val_loss": val, "elapsed_s": time.monotonic() - start}
        log.append(row)
        if log_fn:
            log_fn(row)
        if val < best[0]:
            best = (val, ep, ps.copy())
    return StpmTrainResult(best[2], log, best[1])


def _val_loss(ps, ds, idx, adj, deg, batch: int = 64) -> float:
    tot, n = 0.0, 0
    for s in range(0, len(idx), batch):
        x, y, _ = ds.batch(idx[s : s + batch])
        pred = stpm_predict_ratio(ps, x, adj, deg).value
        tot += float(((pred - y.transpose(0, 2, 1)) ** 2).sum())
        n += pred.size
    return tot / max(n, 1)
