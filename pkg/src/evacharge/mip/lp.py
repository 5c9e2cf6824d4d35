"""Dense two-phase tableau simplex with Bland's rule."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

TOL = 1e-9
PIVOT_TOL = 1e-7


class Infeasible(Exception):
    pass


class Unbounded(Exception):
    pass


@dataclass
class LpResult:
    x: np.ndarray
    objective: float
    pivots: int


def _pivot(T: np.ndarray, r: int, e: int) -> None:
    T[r] /= T[r, e]
    col = T[:, e].copy()
    col[r] = 0.0
    T -= np.outer(col, T[r])


def _simplex(T: np.ndarray, basis: list[int], allowed: np.ndarray, max_pivots: int) -> int:
    """Minimize the objective held in the last row of ``T`` (reduced costs, -value at [-1, -1])."""
    m = T.shape[0] - 1
    pivots = 0
    while True:
        red = T[-1, :-1]
        cand = np.flatnonzero((red < -TOL) & allowed)
        if cand.size == 0:
            return pivots
        e = int(cand[0])
        col = T[:m, e]
        pos = col > PIVOT_TOL
        if not pos.any():
            raise Unbounded("objective unbounded below")
        ratios = np.full(m, np.inf)
        ratios[pos] = np.maximum(T[:m, -1][pos], 0.0) / col[pos]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + TOL * max(1.0, abs(best)))
        r = int(min(ties, key=lambda i: basis[i]))
        _pivot(T, r, e)
        basis[r] = e
        pivots += 1
        if pivots > max_pivots:
            raise RuntimeError("simplex pivot limit reached")


def solve_lp(
    c,
    A_ub=None,
    b_ub=None,
    A_eq=None,
    b_eq=None,
    upper=None,
    maximize: bool = False,
    max_pivots: int = 200_000,
) -> LpResult:
    """Solve min (or max) c.x s.t. A_ub x <= b_ub, A_eq x = b_eq, 0 <= x <= upper.

    ``upper`` entries may be ``inf``.  Raises ``Infeasible`` or ``Unbounded``.
    """
    c = np.asarray(c, dtype=np.float64)
    n = c.size
    rows, rhs, kinds = [], [], []
    if A_ub is not None and len(A_ub):
        for a, b in zip(np.asarray(A_ub, dtype=np.float64).reshape(-1, n), np.asarray(b_ub, dtype=np.float64).ravel()):
            rows.append(a)
            rhs.append(b)
            kinds.append("le")
    if upper is not None:
        up = np.broadcast_to(np.asarray(upper, dtype=np.float64), (n,))
        for j in np.flatnonzero(np.isfinite(up)):
            a = np.zeros(n)
            a[j] = 1.0
            rows.append(a)
            rhs.append(up[j])
            kinds.append("le")
    if A_eq is not None and len(A_eq):
        for a, b in zip(np.asarray(A_eq, dtype=np.float64).reshape(-1, n), np.asarray(b_eq, dtype=np.float64).ravel()):
            rows.append(a)
            rhs.append(b)
            kinds.append("eq")
    m = len(rows)
    cost = -c if maximize else c
    if m == 0:
        if (cost < -TOL).any():
            raise Unbounded("objective unbounded below")
        return LpResult(np.zeros(n), 0.0, 0)

    n_slack = sum(1 for k in kinds if k == "le")
    # columns: originals | slacks | artificials | rhs
    A = np.zeros((m, n + n_slack))
    b = np.array(rhs, dtype=np.float64)
    s = n
    slack_of = {}
    for i, (a, k) in enumerate(zip(rows, kinds)):
        A[i, :n] = a
        if k == "le":
            A[i, s] = 1.0
            slack_of[i] = s
            s += 1
    neg = b < 0
    A[neg] *= -1.0
    b[neg] *= -1.0
    basis: list[int] = [-1] * m
    need_art = []
    for i in range(m):
        if i in slack_of and not neg[i]:
            basis[i] = slack_of[i]
        else:
            need_art.append(i)
    n_art = len(need_art)
    N = n + n_slack + n_art
    T = np.zeros((m + 1, N + 1))
    T[:m, : n + n_slack] = A
    T[:m, -1] = b
    for j, i in enumerate(need_art):
        T[i, n + n_slack + j] = 1.0
        basis[i] = n + n_slack + j
    pivots = 0
    if n_art:
        # phase I: minimize the sum of artificials
        T[-1, n + n_slack : N] = 1.0
        for i in need_art:
            T[-1] -= T[i]
        allowed = np.ones(N, dtype=bool)
        pivots += _simplex(T, basis, allowed, max_pivots)
        if -T[-1, -1] > 1e-7 * max(1.0, float(np.abs(b).max())):
            raise Infeasible("no feasible point")
        # drive zero-level artificials out of the basis; drop redundant rows
        keep = []
        for i in range(m):
            if basis[i] >= n + n_slack:
                nz = np.flatnonzero(np.abs(T[i, : n + n_slack]) > PIVOT_TOL)
                if nz.size:
                    _pivot(T, i, int(nz[0]))
                    basis[i] = int(nz[0])
                    keep.append(i)
            else:
                keep.append(i)
        T = np.vstack([T[keep], T[-1:]])
        basis = [basis[i] for i in keep]
        T = np.delete(T, np.s_[n + n_slack : N], axis=1)
        m = len(keep)
    N = n + n_slack
    T[-1] = 0.0
    T[-1, :n] = cost
    for i, j in enumerate(basis):
        if T[-1, j] != 0.0:
            T[-1] -= T[-1, j] * T[i]
    pivots += _simplex(T, basis, np.ones(N, dtype=bool), max_pivots)
    x = np.zeros(N)
    for i, j in enumerate(basis):
        x[j] = T[i, -1]
    x = np.maximum(x[:n], 0.0)
    obj = float(c @ x)
    return LpResult(x, obj, pivots)
