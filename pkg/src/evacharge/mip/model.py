"""MCT deployment MIP: closed-form risk coefficients, model assembly, branch and bound.

Units: hours for time, vehicles for queues and service amounts.  A truck's
capability is converted from kWh to vehicles with the mean refill energy.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass

import numpy as np

from .lp import Infeasible, LpResult, solve_lp

EXACT_GROUP_LIMIT = 12
REFILL_KWH = 36.0
SERVICE_RATE_VPH = 60.0 / 18.0
INT_TOL = 1e-6


class SizeLimit(Exception):
    pass


@dataclass
class MipInstance:
    arrivals: np.ndarray  # (F, P)
    chargers: np.ndarray  # (F, P)
    q0: np.ndarray  # (F,)
    l0: np.ndarray  # (K, F) hours
    relocate: np.ndarray  # (K, P, F, F) hours, [k, p, j, i]; row p=0 unused
    capability: np.ndarray  # (K,) vehicles
    sat_h: np.ndarray  # (F,) time at which local hazard hits zero
    t0_h: float = 0.0
    tau_h: float = 12.0
    delta_h: float = 2.5
    mu_fcs: float = SERVICE_RATE_VPH
    mu_mct: float = SERVICE_RATE_VPH

    def __post_init__(self):
        self.arrivals = np.asarray(self.arrivals, dtype=np.float64)
        self.chargers = np.asarray(self.chargers, dtype=np.float64)
        self.q0 = np.asarray(self.q0, dtype=np.float64)
        F, P = self.arrivals.shape
        K = len(np.atleast_1d(self.capability)) if np.size(self.capability) else 0
        self.l0 = np.asarray(self.l0, dtype=np.float64).reshape(K, F)
        self.relocate = np.asarray(self.relocate, dtype=np.float64).reshape(K, P, F, F)
        self.capability = np.asarray(self.capability, dtype=np.float64).reshape(K)
        self.sat_h = np.asarray(self.sat_h, dtype=np.float64).reshape(F)
        if self.delta_h <= 0:
            raise ValueError("epoch length must be positive")
        for name in ("arrivals", "chargers", "q0", "l0", "relocate", "capability"):
            if (getattr(self, name) < 0).any():
                raise ValueError(f"{name} must be non-negative")
        if self.chargers.shape != (F, P) or self.q0.shape != (F,):
            raise ValueError("inconsistent instance shapes")

    @property
    def F(self) -> int:
        return self.arrivals.shape[0]

    @property
    def P(self) -> int:
        return self.arrivals.shape[1]

    @property
    def K(self) -> int:
        return self.capability.shape[0]

    def epoch_start(self, p: int) -> float:
        return self.t0_h + p * self.delta_h

    def service_time0(self) -> np.ndarray:
        return np.maximum(0.0, self.delta_h - self.l0)

    def service_time(self) -> np.ndarray:
        return np.maximum(0.0, self.delta_h - self.relocate)


# ------------------------------------------------------------ objective
def _exp_moments(a: float, b: float, start: float, sat: float, tau: float) -> tuple[float, float]:
    """int_a^b e^{(t-sat)/tau} dt and int_a^b (t-start) e^{(t-sat)/tau} dt."""
    ea, eb = math.exp((a - sat) / tau), math.exp((b - sat) / tau)
    i0 = tau * (eb - ea)
    i1 = tau * ((b - start) * eb - (a - start) * ea) - tau * i0
    return i0, i1


def objective_coeffs(inst: MipInstance, i: int, p: int) -> tuple[float, float, float]:
    """Coefficients (on Q_i^p, on Q_i^{p+1}, constant) of the epoch's risk integral.

    The queue is linear over the epoch and risk is exponential up to the
    saturation time and 1 afterwards, so the integral splits there.
    """
    a = inst.epoch_start(p)
    b = a + inst.delta_h
    d = inst.delta_h
    sat = float(inst.sat_h[i])
    m0 = m1 = 0.0
    cut = min(max(sat, a), b)
    if cut > a:
        i0, i1 = _exp_moments(a, cut, a, sat, inst.tau_h)
        m0 += i0
        m1 += i1
    if b > cut:
        m0 += b - cut
        m1 += 0.5 * ((b - a) ** 2 - (cut - a) ** 2)
    return m0 - m1 / d, m1 / d, 0.0


def coefficient_table(inst: MipInstance) -> tuple[np.ndarray, np.ndarray]:
    lo = np.zeros((inst.F, inst.P))
    hi = np.zeros((inst.F, inst.P))
    for i in range(inst.F):
        for p in range(inst.P):
            lo[i, p], hi[i, p], _ = objective_coeffs(inst, i, p)
    return lo, hi


# ------------------------------------------------------------ model
@dataclass
class Layout:
    """Column index maps of the full model."""

    K: int
    F: int
    P: int

    def __post_init__(self):
        K, F, P = self.K, self.F, self.P
        self.nx = K * F * P
        self.nz = K * F * F * max(P - 1, 0)
        self.nu = K * F * P
        self.ns = F * P
        self.nq = F * P
        self.ox = 0
        self.oz = self.ox + self.nx
        self.ou = self.oz + self.nz
        self.os = self.ou + self.nu
        self.oq = self.os + self.ns
        self.n = self.oq + self.nq

    def x(self, k, i, p):
        return self.ox + (k * self.F + i) * self.P + p

    def z(self, k, j, i, p):
        return self.oz + ((k * self.F + j) * self.F + i) * (self.P - 1) + (p - 1)

    def u(self, k, i, p):
        return self.ou + (k * self.F + i) * self.P + p

    def s(self, i, p):
        return self.os + i * self.P + p

    def q(self, i, p):
        """Q_i^p for p = 1..P (Q^0 is data)."""
        return self.oq + i * self.P + (p - 1)

    def names(self) -> list[str]:
        out = [""] * self.n
        K, F, P = self.K, self.F, self.P
        for k, i, p in itertools.product(range(K), range(F), range(P)):
            out[self.x(k, i, p)] = f"x_{k}_{i}_{p}"
            out[self.u(k, i, p)] = f"U_{k}_{i}_{p}"
        for k, j, i, p in itertools.product(range(K), range(F), range(F), range(1, P)):
            out[self.z(k, j, i, p)] = f"z_{k}_{j}_{i}_{p}"
        for i, p in itertools.product(range(F), range(P)):
            out[self.s(i, p)] = f"S_{i}_{p}"
            out[self.q(i, p + 1)] = f"Q_{i}_{p + 1}"
        return out


@dataclass
class ModelMatrices:
    layout: Layout
    c: np.ndarray
    const: float
    A_ub: np.ndarray
    b_ub: np.ndarray
    ub_names: list[str]
    A_eq: np.ndarray
    b_eq: np.ndarray
    eq_names: list[str]
    upper: np.ndarray
    binary: np.ndarray


def build_model(inst: MipInstance, formulation: str = "paper") -> ModelMatrices:
    """Full model with x, z, U, S, Q columns.

    The queue recursion runs through the last epoch so the final epoch's
    integral has an end-point queue.  ``formulation="flow"`` replaces the
    three pairwise linking rows with flow-balance rows: same integer points,
    a tighter and much smaller relaxation.
    """
    if formulation not in ("paper", "flow"):
        raise ValueError(f"unknown formulation {formulation!r}")
    K, F, P = inst.K, inst.F, inst.P
    L = Layout(K, F, P)
    n = L.n
    c = np.zeros(n)
    const = 0.0
    lo, hi = coefficient_table(inst)
    for i in range(F):
        for p in range(P):
            if p == 0:
                const += lo[i, p] * inst.q0[i]
            else:
                c[L.q(i, p)] += lo[i, p]
            c[L.q(i, p + 1)] += hi[i, p]
    ub_rows, ub_rhs, ub_names = [], [], []
    eq_rows, eq_rhs, eq_names = [], [], []

    def row(entries):
        r = np.zeros(n)
        for j, v in entries:
            r[j] += v
        return r

    for k in range(K):
        for p in range(P):
            eq_rows.append(row([(L.x(k, i, p), 1.0) for i in range(F)]))
            eq_rhs.append(1.0)
            eq_names.append(f"assign_{k}_{p}")
    for k, p in itertools.product(range(K), range(1, P)):
        if formulation == "flow":
            # z as a transport plan between consecutive assignments; implies the three linking rows
            for j in range(F):
                eq_rows.append(row([(L.z(k, j, i, p), 1.0) for i in range(F)] + [(L.x(k, j, p - 1), -1.0)]))
                eq_rhs.append(0.0)
                eq_names.append(f"out_{k}_{j}_{p}")
            for i in range(F):
                eq_rows.append(row([(L.z(k, j, i, p), 1.0) for j in range(F)] + [(L.x(k, i, p), -1.0)]))
                eq_rhs.append(0.0)
                eq_names.append(f"in_{k}_{i}_{p}")
            continue
        for j, i in itertools.product(range(F), range(F)):
            zz = L.z(k, j, i, p)
            ub_rows.append(row([(zz, 1.0), (L.x(k, j, p - 1), -1.0)]))
            ub_rhs.append(0.0)
            ub_names.append(f"trans1_{k}_{j}_{i}_{p}")
            ub_rows.append(row([(zz, 1.0), (L.x(k, i, p), -1.0)]))
            ub_rhs.append(0.0)
            ub_names.append(f"trans2_{k}_{j}_{i}_{p}")
            ub_rows.append(row([(zz, -1.0), (L.x(k, j, p - 1), 1.0), (L.x(k, i, p), 1.0)]))
            ub_rhs.append(1.0)
            ub_names.append(f"trans3_{k}_{j}_{i}_{p}")
    ell0 = inst.service_time0()
    ell = inst.service_time()
    for k, i in itertools.product(range(K), range(F)):
        ub_rows.append(row([(L.u(k, i, 0), 1.0), (L.x(k, i, 0), -inst.mu_mct * ell0[k, i])]))
        ub_rhs.append(0.0)
        ub_names.append(f"mct0_{k}_{i}")
        for p in range(1, P):
            ent = [(L.u(k, i, p), 1.0)] + [(L.z(k, j, i, p), -inst.mu_mct * ell[k, p, j, i]) for j in range(F)]
            ub_rows.append(row(ent))
            ub_rhs.append(0.0)
            ub_names.append(f"mct_{k}_{i}_{p}")
    for i, p in itertools.product(range(F), range(P)):
        ent = [(L.s(i, p), 1.0)] + [(L.u(k, i, p), 1.0) for k in range(K)]
        rhs = inst.arrivals[i, p]
        if p == 0:
            rhs += inst.q0[i]
        else:
            ent.append((L.q(i, p), -1.0))
        ub_rows.append(row(ent))
        ub_rhs.append(rhs)
        ub_names.append(f"service_{i}_{p}")
        ent = [(L.q(i, p + 1), 1.0), (L.s(i, p), 1.0)] + [(L.u(k, i, p), 1.0) for k in range(K)]
        rhs = inst.arrivals[i, p]
        if p == 0:
            rhs += inst.q0[i]
        else:
            ent.append((L.q(i, p), -1.0))
        eq_rows.append(row(ent))
        eq_rhs.append(rhs)
        eq_names.append(f"queue_{i}_{p}")
    for k in range(K):
        ub_rows.append(row([(L.u(k, i, p), 1.0) for i in range(F) for p in range(P)]))
        ub_rhs.append(inst.capability[k])
        ub_names.append(f"cap_{k}")
    upper = np.full(n, np.inf)
    if formulation == "paper":
        upper[L.ox : L.ox + L.nx] = 1.0
        upper[L.oz : L.oz + L.nz] = 1.0
    for i, p in itertools.product(range(F), range(P)):
        upper[L.s(i, p)] = inst.mu_fcs * inst.chargers[i, p] * inst.delta_h
    binary = np.zeros(n, dtype=bool)
    binary[L.ox : L.oz + L.nz] = True
    return ModelMatrices(
        L,
        c,
        const,
        np.array(ub_rows).reshape(-1, n),
        np.array(ub_rhs),
        ub_names,
        np.array(eq_rows).reshape(-1, n),
        np.array(eq_rhs),
        eq_names,
        upper,
        binary,
    )


# ------------------------------------------------------------ solutions
@dataclass
class MipSolution:
    x: np.ndarray  # (K, F, P) int
    z: np.ndarray  # (K, F, F, P) int, [:, :, :, 0] unused
    U: np.ndarray  # (K, F, P)
    S: np.ndarray  # (F, P)
    Q: np.ndarray  # (F, P + 1), column 0 = initial queue
    objective: float
    exact: bool = True
    root_bound: float = float("nan")
    rounding_objective: float = float("nan")
    nodes: int = 0

    def assignment(self) -> np.ndarray:
        """(K, P) station index per truck and epoch."""
        return np.argmax(self.x, axis=1) if self.x.size else np.zeros((0, self.Q.shape[1] - 1), dtype=int)


def _decode(inst: MipInstance, mm: ModelMatrices, res: LpResult) -> MipSolution:
    L = mm.layout
    K, F, P = inst.K, inst.F, inst.P
    v = res.x
    x = np.zeros((K, F, P), dtype=np.int64)
    U = np.zeros((K, F, P))
    z = np.zeros((K, F, F, P), dtype=np.int64)
    for k, i, p in itertools.product(range(K), range(F), range(P)):
        x[k, i, p] = int(round(v[L.x(k, i, p)]))
        U[k, i, p] = v[L.u(k, i, p)]
    for k, p in itertools.product(range(K), range(1, P)):
        for j, i in itertools.product(range(F), range(F)):
            z[k, j, i, p] = x[k, j, p - 1] * x[k, i, p]
    S = np.array([[v[L.s(i, p)] for p in range(P)] for i in range(F)]).reshape(F, P)
    Q = np.zeros((F, P + 1))
    Q[:, 0] = inst.q0
    for i, p in itertools.product(range(F), range(1, P + 1)):
        Q[i, p] = v[L.q(i, p)]
    return MipSolution(x, z, U, S, Q, float(res.objective + mm.const))


def _solve_node(mm: ModelMatrices, fixed: dict[tuple[int, int], int]) -> LpResult:
    L = mm.layout
    up = mm.upper.copy()
    for (k, p), i in fixed.items():
        for j in range(L.F):
            if j != i:
                up[L.x(k, j, p)] = 0.0
    return solve_lp(mm.c, mm.A_ub, mm.b_ub, mm.A_eq, mm.b_eq, up)


def _group_values(mm: ModelMatrices, v: np.ndarray, k: int, p: int) -> np.ndarray:
    L = mm.layout
    return np.array([v[L.x(k, i, p)] for i in range(L.F)])


def solve_fixed(inst: MipInstance, assign: np.ndarray, mm: ModelMatrices | None = None) -> MipSolution:
    """Optimal continuous variables for a fixed (K, P) assignment.

    Only the assigned (truck, station) service columns exist, so the LP stays
    small for full-horizon instances.
    """
    K, F, P = inst.K, inst.F, inst.P
    assign = np.asarray(assign, dtype=np.int64).reshape(K, P)
    nu, ns = K * P, F * P
    n = nu + 2 * ns
    iu = lambda k, p: k * P + p
    is_ = lambda i, p: nu + i * P + p
    iq = lambda i, p: nu + ns + i * P + (p - 1)
    lo, hi = coefficient_table(inst)
    c = np.zeros(n)
    const = 0.0
    for i in range(F):
        for p in range(P):
            if p == 0:
                const += lo[i, p] * inst.q0[i]
            else:
                c[iq(i, p)] += lo[i, p]
            c[iq(i, p + 1)] += hi[i, p]
    upper = np.full(n, np.inf)
    ell0, ell = inst.service_time0(), inst.service_time()
    for k in range(K):
        for p in range(P):
            i = assign[k, p]
            t = ell0[k, i] if p == 0 else ell[k, p, assign[k, p - 1], i]
            upper[iu(k, p)] = inst.mu_mct * t
    for i in range(F):
        for p in range(P):
            upper[is_(i, p)] = inst.mu_fcs * inst.chargers[i, p] * inst.delta_h
    A_eq = np.zeros((F * P, n))
    b_eq = np.zeros(F * P)
    for i in range(F):
        for p in range(P):
            r = i * P + p
            A_eq[r, iq(i, p + 1)] = 1.0
            A_eq[r, is_(i, p)] = 1.0
            for k in range(K):
                if assign[k, p] == i:
                    A_eq[r, iu(k, p)] = 1.0
            b_eq[r] = inst.arrivals[i, p]
            if p == 0:
                b_eq[r] += inst.q0[i]
            else:
                A_eq[r, iq(i, p)] = -1.0
    A_ub = np.zeros((K, n))
    for k in range(K):
        for p in range(P):
            A_ub[k, iu(k, p)] = 1.0
    res = solve_lp(c, A_ub, inst.capability, A_eq, b_eq, upper)
    v = res.x
    x = np.zeros((K, F, P), dtype=np.int64)
    z = np.zeros((K, F, F, P), dtype=np.int64)
    U = np.zeros((K, F, P))
    for k in range(K):
        for p in range(P):
            x[k, assign[k, p], p] = 1
            U[k, assign[k, p], p] = v[iu(k, p)]
            if p > 0:
                z[k, assign[k, p - 1], assign[k, p], p] = 1
    S = np.array([[v[is_(i, p)] for p in range(P)] for i in range(F)]).reshape(F, P)
    Q = np.zeros((F, P + 1))
    Q[:, 0] = inst.q0
    for i in range(F):
        for p in range(1, P + 1):
            Q[i, p] = v[iq(i, p)]
    return MipSolution(x, z, U, S, Q, float(res.objective + const))


def solve_exact(inst: MipInstance, node_limit: int | None = None, seed_heuristic: bool = False) -> MipSolution:
    """Best-first branch and bound over (truck, epoch) assignment groups.

    Each node fixes some groups to a station; the LP relaxation of the rest
    bounds the node.  Returns a provably optimal solution, or raises
    ``SizeLimit`` when the instance has more than the declared number of
    groups.  With ``node_limit`` the search may stop early; the best
    incumbent is then returned with ``exact=False``.  ``seed_heuristic``
    starts from the better of LP rounding and the greedy heuristic.
    """
    K, P = inst.K, inst.P
    if K * P > EXACT_GROUP_LIMIT:
        raise SizeLimit(f"{K} trucks x {P} epochs exceeds the exact-solve limit of {EXACT_GROUP_LIMIT} groups")
    mm = build_model(inst, "flow")
    root = _solve_node(mm, {})
    root_bound = root.objective + mm.const
    if K == 0:
        sol = _decode(inst, mm, root)
        sol.root_bound = sol.rounding_objective = root_bound
        return sol
    rounded = np.array([[int(np.argmax(_group_values(mm, root.x, k, p))) for p in range(P)] for k in range(K)])
    inc = solve_fixed(inst, rounded)
    rounding_obj = inc.objective
    best_obj, best = inc.objective, inc
    if seed_heuristic:
        h = solve_heuristic(inst)
        if h.objective < best_obj:
            best_obj, best = h.objective, h
    tie = itertools.count()
    # entries: (bound, tie, fixed assignment, LP result or None when not yet solved)
    heap: list = [(root_bound, next(tie), {}, root)]
    nodes = 0
    exact = True
    groups = [(k, p) for p in range(P) for k in range(K)]

    def prune(bound: float) -> bool:
        return bound >= best_obj - 1e-9 * max(1.0, abs(best_obj))

    while heap:
        bound, _, fixed, res = heapq.heappop(heap)
        if prune(bound):
            continue
        if res is None:
            try:
                res = _solve_node(mm, fixed)
            except Infeasible:
                continue
            b = res.objective + mm.const
            if not prune(b):
                heapq.heappush(heap, (b, next(tie), fixed, res))
            continue
        nodes += 1
        if node_limit is not None and nodes > node_limit:
            exact = False
            break
        branch = None
        for g in groups:
            if g in fixed:
                continue
            vals = _group_values(mm, res.x, *g)
            if vals.max() < 1.0 - INT_TOL:
                branch = (g, vals)
                break
        if branch is None:
            sol = _decode(inst, mm, res)
            if sol.objective < best_obj:
                best_obj, best = sol.objective, sol
            continue
        g, vals = branch
        for i in sorted(range(inst.F), key=lambda i: (-vals[i], i)):
            child = dict(fixed)
            child[g] = i
            heapq.heappush(heap, (bound, next(tie), child, None))
    best.exact = exact
    best.root_bound = root_bound
    best.rounding_objective = rounding_obj
    best.nodes = nodes
    return best


# ------------------------------------------------------------ heuristic
def fluid_objective(inst: MipInstance, assign: np.ndarray) -> float:
    """Objective of serving as much as possible as early as possible under ``assign`` (K, P)."""
    lo, hi = coefficient_table(inst)
    q = inst.q0.copy()
    budget = inst.capability.copy()
    ell0, ell = inst.service_time0(), inst.service_time()
    total = 0.0
    for p in range(inst.P):
        want = q + inst.arrivals[:, p]
        served = np.minimum(want, inst.mu_fcs * inst.chargers[:, p] * inst.delta_h)
        for k in range(inst.K):
            i = int(assign[k, p])
            t = ell0[k, i] if p == 0 else ell[k, p, int(assign[k, p - 1]), i]
            u = min(inst.mu_mct * t, budget[k], want[i] - served[i])
            served[i] += u
            budget[k] -= u
        nq = want - served
        total += float(lo[:, p] @ q + hi[:, p] @ nq)
        q = nq
    return total


def solve_heuristic(inst: MipInstance) -> MipSolution:
    """Greedy per-epoch assignment by marginal objective decrease, then the LP for the rest.

    Not exact; the returned solution carries ``exact=False``.
    """
    K, P, F = inst.K, inst.P, inst.F
    assign = np.zeros((K, P), dtype=np.int64)
    for p in range(P):
        for k in range(K):
            best = (np.inf, 0)
            for i in range(F):
                assign[k, p] = i
                trial = assign.copy()
                trial[:, p + 1 :] = trial[:, p : p + 1]
                # trucks not yet placed this epoch stay where they were
                if p > 0:
                    trial[k + 1 :, p] = assign[k + 1 :, p - 1]
                val = fluid_objective(inst, trial)
                if val < best[0] - 1e-12:
                    best = (val, i)
            assign[k, p] = best[1]
    sol = solve_fixed(inst, assign)
    sol.exact = False
    sol.rounding_objective = sol.objective
    return sol


def solve(inst: MipInstance, node_limit: int | None = None) -> MipSolution:
    """Exact when within the size limit, otherwise the heuristic."""
    if inst.K * inst.P <= EXACT_GROUP_LIMIT:
        return solve_exact(inst, node_limit)
    return solve_heuristic(inst)


# ------------------------------------------------------------ checker
def check_solution(inst: MipInstance, sol: MipSolution, tol: float = 1e-6) -> list[str]:
    """Every violated constraint, evaluated term by term from the model definition."""
    K, F, P = inst.K, inst.F, inst.P
    bad: list[str] = []

    def le(a, b, what):
        if a > b + tol * max(1.0, abs(b)):
            bad.append(f"{what}: {a} > {b}")

    x, z, U, S, Q = sol.x, sol.z, sol.U, sol.S, sol.Q
    if x.size and not np.isin(x, (0, 1)).all():
        bad.append("x not binary")
    if z.size and not np.isin(z, (0, 1)).all():
        bad.append("z not binary")
    for k in range(K):
        for p in range(P):
            s = sum(int(x[k, i, p]) for i in range(F))
            if s != 1:
                bad.append(f"assign k={k} p={p}: {s}")
    for k in range(K):
        for p in range(1, P):
            for j in range(F):
                for i in range(F):
                    le(z[k, j, i, p], x[k, j, p - 1], f"trans1 {k},{j},{i},{p}")
                    le(z[k, j, i, p], x[k, i, p], f"trans2 {k},{j},{i},{p}")
                    le(x[k, j, p - 1] + x[k, i, p] - 1, z[k, j, i, p], f"trans3 {k},{j},{i},{p}")
    for k in range(K):
        for i in range(F):
            l0 = max(0.0, inst.delta_h - inst.l0[k, i])
            le(-U[k, i, 0], 0.0, f"U>=0 {k},{i},0")
            le(U[k, i, 0], inst.mu_mct * l0 * x[k, i, 0], f"mct0 {k},{i}")
            for p in range(1, P):
                cap = sum(max(0.0, inst.delta_h - inst.relocate[k, p, j, i]) * z[k, j, i, p] for j in range(F))
                le(-U[k, i, p], 0.0, f"U>=0 {k},{i},{p}")
                le(U[k, i, p], inst.mu_mct * cap, f"mct {k},{i},{p}")
    for i in range(F):
        if abs(Q[i, 0] - inst.q0[i]) > tol:
            bad.append(f"Q0 {i}")
        for p in range(P):
            le(-S[i, p], 0.0, f"S>=0 {i},{p}")
            le(S[i, p], inst.mu_fcs * inst.chargers[i, p] * inst.delta_h, f"fixed {i},{p}")
            out = S[i, p] + sum(U[k, i, p] for k in range(K))
            le(out, Q[i, p] + inst.arrivals[i, p], f"service {i},{p}")
            nxt = Q[i, p] + inst.arrivals[i, p] - out
            if abs(Q[i, p + 1] - nxt) > tol * max(1.0, abs(nxt)):
                bad.append(f"queue {i},{p}: {Q[i, p + 1]} != {nxt}")
            le(-Q[i, p + 1], 0.0, f"Q>=0 {i},{p + 1}")
    for k in range(K):
        le(float(U[k].sum()), inst.capability[k], f"cap {k}")
    obj = 0.0
    for i in range(F):
        for p in range(P):
            a, b, c0 = objective_coeffs(inst, i, p)
            obj += a * Q[i, p] + b * Q[i, p + 1] + c0
    if abs(obj - sol.objective) > tol * max(1.0, abs(obj)):
        bad.append(f"objective {sol.objective} != {obj}")
    return bad


# ------------------------------------------------------------ generator
def random_instance(rng: np.random.Generator, K: int = 2, F: int = 3, P: int = 3) -> MipInstance:
    """Small random instance with queues that trucks can meaningfully reduce."""
    return MipInstance(
        arrivals=rng.uniform(0, 30, size=(F, P)),
        chargers=rng.integers(0, 3, size=(F, P)).astype(float),
        q0=rng.uniform(0, 20, size=F),
        l0=rng.uniform(0, 2.0, size=(K, F)),
        relocate=rng.uniform(0, 2.0, size=(K, P, F, F)),
        capability=rng.uniform(5, 40, size=K),
        sat_h=rng.uniform(40, 60, size=F),
        t0_h=float(rng.uniform(30, 55)),
        tau_h=float(rng.uniform(6, 18)),
    )
