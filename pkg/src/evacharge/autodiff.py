"""Small reverse-mode autodiff engine over float64 numpy arrays (rank <= 3).

Each op returns a :class:`Tensor` holding its parents and a closure that
pushes the output gradient back to them.  :meth:`Tensor.backward` runs the
closures in reverse topological order.

Parameter checkpoint format (all integers uint32 little-endian)::

    b"PSTO" | version | len(init) | init (utf-8) | step | n_records
    per record: len(name) | name (utf-8) | rank | dims... |
                value | adam m | adam v      (float64 little-endian, row-major)
"""

from __future__ import annotations

import hashlib
import struct
from collections import OrderedDict
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

MAGIC = b"PSTO"
FORMAT_VERSION = 1
MAX_RANK = 3


class GraphConsumed(RuntimeError):
    """backward() was called twice on the same graph."""


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("value", "grad", "parents", "_backward", "requires_grad", "name", "_consumed")

    def __init__(self, value, parents: tuple = (), backward: Callable | None = None, requires_grad: bool = False, name: str = ""):
        v = np.asarray(value, dtype=np.float64)
        if v.ndim > MAX_RANK:
            raise ShapeError(f"rank {v.ndim} exceeds {MAX_RANK}")
        self.value = v
        self.grad: np.ndarray | None = None
        self.parents = parents
        self._backward = backward
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.name = name
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}{', ' + self.name if self.name else ''})"

    def zero_grad(self) -> None:
        self.grad = None

    def _acc(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        g = _sum_to_shape(g, self.shape)
        self.grad = g.copy() if self.grad is None else self.grad + g

    def backward(self) -> None:
        if self.value.size != 1:
            raise ShapeError("backward() needs a scalar loss")
        if self._consumed:
            raise GraphConsumed("backward() already ran on this graph; rebuild the forward pass first")
        self._consumed = True
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            t, done = stack.pop()
            if done:
                order.append(t)
                continue
            if id(t) in seen:
                continue
            seen.add(id(t))
            stack.append((t, True))
            for p in t.parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.value)}
        for t in reversed(order):
            g = grads.pop(id(t), None)
            if g is None:
                continue
            if t._backward is None:
                t._acc(g)
                continue
            for p, pg in zip(t.parents, t._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                pg = _sum_to_shape(pg, p.shape)
                if p._backward is None:
                    p._acc(pg)
                else:
                    grads[id(p)] = grads[id(p)] + pg if id(p) in grads else pg

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(_t(other)))

    def __rsub__(self, other):
        return add(_t(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _sum_to_shape(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


def _op(value, parents, backward) -> Tensor:
    return Tensor(value, tuple(parents), backward)


# ----------------------------------------------------------------- elementwise
def add(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    return _op(a.value + b.value, (a, b), lambda g: (g, g))


def neg(a: Tensor) -> Tensor:
    return _op(-a.value, (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    av, bv = a.value, b.value
    return _op(av * bv, (a, b), lambda g: (g * bv, g * av))


def scale(a: Tensor, c: float) -> Tensor:
    return _op(a.value * c, (a,), lambda g: (g * c,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.value)
    return _op(y, (a,), lambda g: (g * (1.0 - y * y),))


def relu(a: Tensor) -> Tensor:
    pos = a.value > 0
    return _op(np.where(pos, a.value, 0.0), (a,), lambda g: (g * pos,))


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.value)
    return _op(y, (a,), lambda g: (g * y,))


def log(a: Tensor) -> Tensor:
    return _op(np.log(a.value), (a,), lambda g: (g / a.value,))


def square(a: Tensor) -> Tensor:
    return _op(a.value**2, (a,), lambda g: (2.0 * g * a.value,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.value >= lo) & (a.value <= hi)
    return _op(np.clip(a.value, lo, hi), (a,), lambda g: (g * inside,))


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; ties send the gradient to ``a``."""
    take_a = a.value <= b.value
    return _op(np.where(take_a, a.value, b.value), (a, b), lambda g: (g * take_a, g * ~take_a))


# ----------------------------------------------------------------- reductions
def sum_(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    shape = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return _op(a.value.sum(axis=axis, keepdims=keepdims), (a,), bw)


def mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    n = a.value.size if axis is None else a.shape[axis]
    return scale(sum_(a, axis, keepdims), 1.0 / n)


def masked_mean(a: Tensor, mask: np.ndarray, axis: int) -> Tensor:
    """Mean over ``axis`` counting only entries where ``mask`` (broadcast to ``a``) is true."""
    m = np.broadcast_to(np.asarray(mask, dtype=np.float64), a.shape)
    cnt = np.maximum(m.sum(axis=axis, keepdims=True), 1.0)
    w = m / cnt
    return sum_(mul(a, w), axis=axis)


# ------------------------------------------------------------------- shapes
def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    old = a.shape
    return _op(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _op(np.transpose(a.value, axes), (a,), lambda g: (np.transpose(g, inv),))


def swap_last(a: Tensor) -> Tensor:
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    parts = [_t(p) for p in parts]
    sizes = [p.shape[axis] for p in parts]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _op(np.concatenate([p.value for p in parts], axis=axis), parts, bw)


def take(a: Tensor, index: np.ndarray, axis: int = 0) -> Tensor:
    """Select entries along ``axis`` (like ``np.take``)."""
    idx = np.asarray(index, dtype=np.int64)
    shape = a.shape

    def bw(g):
        out = np.zeros(shape)
        moved = np.moveaxis(out, axis, 0)
        np.add.at(moved, idx, np.moveaxis(g, axis, 0))
        return (out,)

    return _op(np.take(a.value, idx, axis=axis), (a,), bw)


def gather_last(a: Tensor, index: np.ndarray) -> Tensor:
    """out[b] = a[b, index[b]] for a rank-2 tensor."""
    idx = np.asarray(index, dtype=np.int64)
    rows = np.arange(a.shape[0])

    def bw(g):
        out = np.zeros(a.shape)
        out[rows, idx] = g
        return (out,)

    return _op(a.value[rows, idx], (a,), bw)


# ------------------------------------------------------------------- linear
def matmul(a, b) -> Tensor:
    """Matrix product; rank-3 operands are batched over the leading axis."""
    a, b = _t(a), _t(b)
    av, bv = a.value, b.value
    if av.shape[-1] != bv.shape[-2 if bv.ndim > 1 else 0]:
        raise ShapeError(f"matmul {av.shape} @ {bv.shape}")

    def bw(g):
        ga = g @ np.swapaxes(bv, -1, -2)
        if av.ndim == 3 and bv.ndim == 2:
            gb = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(av, -1, -2) @ g
        return ga, gb

    return _op(av @ bv, (a, b), bw)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = matmul(x, w)
    return y if b is None else add(y, b)


# ------------------------------------------------------------------ softmax
def masked_softmax(a: Tensor, mask: np.ndarray | None = None, axis: int = -1) -> Tensor:
    """Softmax over ``axis``; masked-out entries get probability exactly 0 and zero gradient.

    Rows with every entry masked come out as all zeros.
    """
    x = a.value
    m = np.ones(x.shape, dtype=bool) if mask is None else np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    xm = np.where(m, x, -np.inf)
    mx = np.max(xm, axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    e = np.where(m, np.exp(np.where(m, x, 0.0) - mx), 0.0)
    z = e.sum(axis=axis, keepdims=True)
    y = np.where(z > 0, e / np.where(z > 0, z, 1.0), 0.0)

    def bw(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _op(y, (a,), bw)


def masked_log_softmax(a: Tensor, mask: np.ndarray | None = None, axis: int = -1) -> Tensor:
    """Log-softmax over ``axis``; masked entries are reported as 0 with zero gradient."""
    x = a.value
    m = np.ones(x.shape, dtype=bool) if mask is None else np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
    xm = np.where(m, x, -np.inf)
    mx = np.max(xm, axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    e = np.where(m, np.exp(np.where(m, x, 0.0) - mx), 0.0)
    z = e.sum(axis=axis, keepdims=True)
    lz = np.log(np.where(z > 0, z, 1.0)) + mx
    y = np.where(m, x - lz, 0.0)
    p = np.where(z > 0, e / np.where(z > 0, z, 1.0), 0.0)

    def bw(g):
        gm = np.where(m, g, 0.0)
        return (gm - p * gm.sum(axis=axis, keepdims=True),)

    return _op(y, (a,), bw)


# ---------------------------------------------------------------- attention
def split_heads(x: Tensor, heads: int) -> Tensor:
    """(B, n, d) -> (B*heads, n, d/heads)."""
    B, n, d = x.shape
    if d % heads:
        raise ShapeError(f"model dim {d} not divisible by {heads} heads")
    dh = d // heads

    def fwd(v):
        return v.reshape(B, n, heads, dh).transpose(0, 2, 1, 3).reshape(B * heads, n, dh)

    def bw(g):
        return (g.reshape(B, heads, n, dh).transpose(0, 2, 1, 3).reshape(B, n, d),)

    return _op(fwd(x.value), (x,), bw)


def merge_heads(x: Tensor, heads: int) -> Tensor:
    """(B*heads, n, dh) -> (B, n, heads*dh)."""
    Bh, n, dh = x.shape
    B = Bh // heads

    def bw(g):
        return (g.reshape(B, n, heads, dh).transpose(0, 2, 1, 3).reshape(Bh, n, dh),)

    return _op(x.value.reshape(B, heads, n, dh).transpose(0, 2, 1, 3).reshape(B, n, heads * dh), (x,), bw)


def attention(q: Tensor, k: Tensor, v: Tensor, key_mask: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
    """Scaled dot-product attention on (B, n, d) tensors; returns (output, weights).

    ``key_mask`` is (B, n_k) boolean; masked keys get zero weight.
    """
    d = q.shape[-1]
    scores = scale(matmul(q, swap_last(k)), 1.0 / np.sqrt(d))
    mask = None if key_mask is None else np.asarray(key_mask, dtype=bool)[:, None, :]
    w = masked_softmax(scores, mask)
    return matmul(w, v), w


def mha_forward(
    x_q: Tensor,
    x_kv: Tensor,
    wq: Tensor,
    wk: Tensor,
    wv: Tensor,
    wo: Tensor,
    heads: int,
    key_mask: np.ndarray | None = None,
) -> Tensor:
    """Multi-head attention on (B, n, d) inputs with head concat and output projection."""
    if x_q.ndim == 2:
        x_q = reshape(x_q, (1, *x_q.shape))
        x_kv = reshape(x_kv, (1, *x_kv.shape))
        if key_mask is not None:
            key_mask = np.asarray(key_mask)[None]
        return reshape(mha_forward(x_q, x_kv, wq, wk, wv, wo, heads, key_mask), x_q.shape[1:])
    if x_q.shape[0] != x_kv.shape[0] or x_q.shape[-1] != wq.shape[0]:
        raise ShapeError(f"mha shapes {x_q.shape} vs {x_kv.shape}")
    q = split_heads(matmul(x_q, wq), heads)
    k = split_heads(matmul(x_kv, wk), heads)
    v = split_heads(matmul(x_kv, wv), heads)
    mask = None
    if key_mask is not None:
        mask = np.repeat(np.asarray(key_mask, dtype=bool), heads, axis=0)
    out, _ = attention(q, k, v, mask)
    return matmul(merge_heads(out, heads), wo)


def swap_groups(x: Tensor, outer: int) -> Tensor:
    """(outer*a, b, d) -> (outer*b, a, d): swaps the two grouped axes of a packed tensor.

    Used to move between (B*T, E, d) for spatial work and (B*E, T, d) for
    temporal work without leaving rank 3.
    """
    n, b, d = x.shape
    a = n // outer
    if a * outer != n:
        raise ShapeError(f"leading axis {n} not divisible by {outer}")

    def bw(g):
        return (g.reshape(outer, b, a, d).transpose(0, 2, 1, 3).reshape(n, b, d),)

    return _op(x.value.reshape(outer, a, b, d).transpose(0, 2, 1, 3).reshape(outer * b, a, d), (x,), bw)


# --------------------------------------------------------------- convolution
def conv1d_time(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Same-padded 1-D convolution along axis 1 of a (B, T, c_in) tensor.

    ``w`` has shape (width, c_in, c_out) with odd width; zero padding at both ends.
    """
    width, cin, cout = w.shape
    if width % 2 == 0:
        raise ShapeError("kernel width must be odd")
    B, T, c = x.shape
    if c != cin:
        raise ShapeError(f"conv channels {c} vs {cin}")
    half = width // 2
    xp = np.pad(x.value, ((0, 0), (half, half), (0, 0)))
    cols = np.concatenate([xp[:, j : j + T, :] for j in range(width)], axis=2)  # B,T,width*cin
    w2 = w.value.reshape(width * cin, cout)
    y = cols @ w2

    def bw(g):
        gw = (cols.reshape(-1, width * cin).T @ g.reshape(-1, cout)).reshape(width, cin, cout)
        gcols = g @ w2.T
        gxp = np.zeros_like(xp)
        for j in range(width):
            gxp[:, j : j + T, :] += gcols[:, :, j * cin : (j + 1) * cin]
        return gxp[:, half : half + T, :], gw

    out = _op(y, (x, w), bw)
    return out if b is None else add(out, b)


# ---------------------------------------------------------------- parameters
class ParamStore:
    """Ordered named parameters with Adam state."""

    def __init__(self, init: str = "", seed: int | None = None):
        self.params: OrderedDict[str, Tensor] = OrderedDict()
        self.init = init
        self.step = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self._rng = np.random.default_rng(seed) if seed is not None else None

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params)

    def __len__(self) -> int:
        return len(self.params)

    def add(self, name: str, value) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)
        self.params[name] = t
        self.m[name] = np.zeros_like(t.value)
        self.v[name] = np.zeros_like(t.value)
        return t

    def glorot(self, name: str, shape: Sequence[int], gain: float = 1.0) -> Tensor:
        if self._rng is None:
            raise RuntimeError("ParamStore created without a seed")
        fan_in = shape[-2] if len(shape) >= 2 else shape[0]
        fan_out = shape[-1]
        if len(shape) == 3:
            fan_in *= shape[0]
        lim = gain * np.sqrt(6.0 / (fan_in + fan_out))
        return self.add(name, self._rng.uniform(-lim, lim, size=tuple(shape)))

    def zeros(self, name: str, shape: Sequence[int]) -> Tensor:
        return self.add(name, np.zeros(tuple(shape)))

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {n: (t.grad if t.grad is not None else np.zeros_like(t.value)) for n, t in self.params.items()}

    def adam_step(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8, max_norm: float | None = None) -> None:
        grads = self.grads()
        if max_norm is not None:
            norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
            if norm > max_norm:
                grads = {n: g * (max_norm / norm) for n, g in grads.items()}
        self.step += 1
        c1 = 1.0 - beta1**self.step
        c2 = 1.0 - beta2**self.step
        for n, t in self.params.items():
            g = grads[n]
            self.m[n] = beta1 * self.m[n] + (1.0 - beta1) * g
            self.v[n] = beta2 * self.v[n] + (1.0 - beta2) * g * g
            t.value = t.value - lr * (self.m[n] / c1) / (np.sqrt(self.v[n] / c2) + eps)

    def values(self) -> dict[str, np.ndarray]:
        return {n: t.value.copy() for n, t in self.params.items()}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for n, t in self.params.items():
            if values[n].shape != t.value.shape:
                raise ShapeError(f"{n}: {values[n].shape} vs {t.value.shape}")
            t.value = np.array(values[n], dtype=np.float64)

    def copy(self) -> "ParamStore":
        out = ParamStore(self.init)
        for n, t in self.params.items():
            out.add(n, t.value.copy())
            out.m[n] = self.m[n].copy()
            out.v[n] = self.v[n].copy()
        out.step = self.step
        return out

    def reset_optimizer(self) -> None:
        self.step = 0
        for n in self.params:
            self.m[n] = np.zeros_like(self.m[n])
            self.v[n] = np.zeros_like(self.v[n])

    def digest(self) -> str:
        """SHA-256 over names, shapes and value bytes (not optimizer state)."""
        h = hashlib.sha256()
        for n, t in self.params.items():
            h.update(n.encode())
            h.update(str(t.value.shape).encode())
            h.update(np.ascontiguousarray(t.value, dtype="<f8").tobytes())
        return h.hexdigest()

    # ---------------------------------------------------------- file format
    def to_bytes(self) -> bytes:
        out = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
        init = self.init.encode("utf-8")
        out += [struct.pack("<I", len(init)), init, struct.pack("<II", self.step, len(self.params))]
        for n, t in self.params.items():
            name = n.encode("utf-8")
            out += [struct.pack("<I", len(name)), name, struct.pack("<I", t.value.ndim)]
            out += [struct.pack("<I", d) for d in t.value.shape]
            for arr in (t.value, self.m[n], self.v[n]):
                out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "ParamStore":
        if data[:4] != MAGIC:
            raise ValueError("not a parameter file (bad magic)")
        pos = 4

        def u32():
            nonlocal pos
            (v,) = struct.unpack_from("<I", data, pos)
            pos += 4
            return v

        version = u32()
        if version != FORMAT_VERSION:
            raise ValueError(f"unsupported parameter file version {version}")
        n_init = u32()
        init = data[pos : pos + n_init].decode("utf-8")
        pos += n_init
        store = cls(init)
        store.step = u32()
        n_rec = u32()
        for _ in range(n_rec):
            ln = u32()
            name = data[pos : pos + ln].decode("utf-8")
            pos += ln
            rank = u32()
            shape = tuple(u32() for _ in range(rank))
            size = int(np.prod(shape)) if shape else 1
            arrs = []
            for _ in range(3):
                arrs.append(np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64))
                pos += 8 * size
            store.add(name, arrs[0])
            store.m[name], store.v[name] = arrs[1], arrs[2]
        if pos != len(data):
            raise ValueError("trailing bytes in parameter file")
        return store

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "ParamStore":
        return cls.from_bytes(Path(path).read_bytes())


def save_arrays(path: str | Path, arrays: dict[str, np.ndarray], init: str = "arrays") -> None:
    """Store plain named arrays (rank <= 3) in the parameter file format."""
    store = ParamStore(init)
    for n, a in arrays.items():
        store.add(n, np.asarray(a, dtype=np.float64))
    store.save(path)


def load_arrays(path: str | Path) -> tuple[str, dict[str, np.ndarray]]:
    store = ParamStore.load(path)
    return store.init, store.values()


# -------------------------------------------------------------- grad check
def gradcheck(
    loss_fn: Callable[[], Tensor],
    params: Iterable[Tensor],
    eps: float = 1e-5,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between backprop and central differences.

    relative error = |a - n| / max(|a|, |n|, 1e-6).  ``max_entries`` samples
    that many coordinates per parameter instead of checking all of them.
    """
    params = list(params)
    for p in params:
        p.value = np.ascontiguousarray(p.value)
        p.grad = None
    loss_fn().backward()
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.value) for p in params]
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.value.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, max_entries, replace=False)
        for j in idx:
            old = flat[j]
            flat[j] = old + eps
            up = float(loss_fn().value)
            flat[j] = old - eps
            down = float(loss_fn().value)
            flat[j] = old
            num = (up - down) / (2 * eps)
            an = float(a.reshape(-1)[j])
            err = abs(an - num) / max(abs(an), abs(num), 1e-6)
            worst = max(worst, err)
    return worst
