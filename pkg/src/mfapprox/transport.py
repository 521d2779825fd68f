"""Exact discrete optimal transport between weighted point clouds.

Plans are solved to optimality: a monotone merge for d = 1 (the sorted
coupling is optimal for convex costs) and the HiGHS dual simplex otherwise.
Both return basic solutions, so plans carry at most n + m - 1 entries.
``brute_force_plan`` enumerates every vertex of the transportation polytope
and is the independent oracle for the solvers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .measures import WeightedCloud

MARGINAL_TOL = 1e-9
_DUST = 1e-14


def _check_pair(a: WeightedCloud, b: WeightedCloud, p) -> None:
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if p not in (1, 2):
        raise ValueError("only p in {1, 2} is supported")
    if abs(math.fsum(a.weights) - math.fsum(b.weights)) > MARGINAL_TOL:
        raise ValueError("unbalanced masses")


def _cost_matrix(a: WeightedCloud, b: WeightedCloud, p) -> np.ndarray:
    # squared distances for p = 2: no roots inside the solver
    diff = a.points[:, None, :] - b.points[None, :, :]
    c2 = np.einsum("ijk,ijk->ij", diff, diff)
    return np.sqrt(c2) if p == 1 else c2


@dataclass(frozen=True, eq=False)
class TransportPlan:
    """Sparse coupling between two clouds with realized p-cost.

    ``cost`` is sum(mass * |x_i - y_j|^p); the Wasserstein distance is its
    p-th root. Marginals match the cloud weights within 1e-9.
    """

    source: WeightedCloud
    target: WeightedCloud
    source_idx: np.ndarray
    target_idx: np.ndarray
    mass: np.ndarray
    cost: float
    p: float

    def __post_init__(self):
        si = np.asarray(self.source_idx, dtype=int)
        ti = np.asarray(self.target_idx, dtype=int)
        q = np.asarray(self.mass, dtype=float)
        if not (len(si) == len(ti) == len(q)):
            raise ValueError("ragged plan entries")
        if len(q) and q.min() < 0:
            raise ValueError(f"negative plan mass {q.min():.3e}")
        row = np.zeros(self.source.n)
        col = np.zeros(self.target.n)
        np.add.at(row, si, q)
        np.add.at(col, ti, q)
        if np.abs(row - self.source.weights).max(initial=0.0) > MARGINAL_TOL:
            raise ValueError("row sums do not match source weights")
        if np.abs(col - self.target.weights).max(initial=0.0) > MARGINAL_TOL:
            raise ValueError("column sums do not match target weights")
        for name, arr in (("source_idx", si), ("target_idx", ti), ("mass", q)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_entries(self) -> int:
        return len(self.mass)

    def row_masses(self) -> np.ndarray:
        out = np.zeros(self.source.n)
        np.add.at(out, self.source_idx, self.mass)
        return out

    def col_masses(self) -> np.ndarray:
        out = np.zeros(self.target.n)
        np.add.at(out, self.target_idx, self.mass)
        return out


def _finish(a, b, si, ti, q, p) -> TransportPlan:
    si = np.asarray(si, dtype=int)
    ti = np.asarray(ti, dtype=int)
    q = np.asarray(q, dtype=float)
    order = np.lexsort((ti, si))
    si, ti, q = si[order], ti[order], q[order]
    diff = a.points[si] - b.points[ti]
    d2 = np.einsum("ij,ij->i", diff, diff)
    c = np.sqrt(d2) if p == 1 else d2
    cost = float(math.fsum(q * c))
    return TransportPlan(a, b, si, ti, q, cost, p)


def _monotone_plan(a: WeightedCloud, b: WeightedCloud, p) -> TransportPlan:
    # sorted (co-monotone) coupling; optimal in 1-D for convex costs
    oa = np.argsort(a.points[:, 0], kind="stable")
    ob = np.argsort(b.points[:, 0], kind="stable")
    ra = a.weights[oa].copy()
    rb = b.weights[ob].copy()
    si, ti, q = [], [], []
    i = j = 0
    while i < len(ra) and j < len(rb):
        m = min(ra[i], rb[j])
        if m > 0.0:
            si.append(oa[i])
            ti.append(ob[j])
            q.append(m)
        ra[i] -= m
        rb[j] -= m
        if ra[i] < rb[j]:
            i += 1
        elif rb[j] < ra[i]:
            j += 1
        else:
            i += 1
            j += 1
    return _finish(a, b, si, ti, q, p)


def _lp_plan(a: WeightedCloud, b: WeightedCloud, p) -> TransportPlan:
    n, m = a.n, b.n
    cost = _cost_matrix(a, b, p)
    idx = np.arange(n * m)
    rows = np.concatenate([idx // m, n + idx % m])
    cols = np.concatenate([idx, idx])
    A = sparse.csr_matrix((np.ones(2 * n * m), (rows, cols)), shape=(n + m, n * m))
    wa = a.weights
    wb = b.weights * (math.fsum(a.weights) / math.fsum(b.weights))
    res = linprog(cost.ravel(), A_eq=A, b_eq=np.concatenate([wa, wb]),
                  bounds=(0, None), method="highs-ds")
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    x = res.x
    keep = x > _DUST
    flat = np.flatnonzero(keep)
    return _finish(a, b, flat // m, flat % m, x[keep], p)


def optimal_plan(a: WeightedCloud, b: WeightedCloud, p=2, method=None) -> TransportPlan:
    """Minimizer of sum(pi_ij |x_i - y_j|^p) over couplings of a and b.

    ``method`` forces a solver ("monotone" requires d = 1, "lp" works in any
    dimension); by default d = 1 uses the monotone merge and d >= 2 the LP.
    Deterministic: fixed atom ordering, deterministic pivot order.
    """
    _check_pair(a, b, p)
    if method is None:
        method = "monotone" if a.dim == 1 else "lp"
    if method == "monotone":
        if a.dim != 1:
            raise ValueError("monotone solver requires d = 1")
        return _monotone_plan(a, b, p)
    if method == "lp":
        return _lp_plan(a, b, p)
    raise ValueError(f"unknown method {method!r}")


def wasserstein(a: WeightedCloud, b: WeightedCloud, p=2, method=None) -> float:
    """W_p distance: p-th root of the optimal plan cost."""
    plan = optimal_plan(a, b, p, method=method)
    return max(plan.cost, 0.0) ** (1.0 / p)


def disintegrate(plan: TransportPlan, side: str = "source") -> dict:
    """Conditional distributions of the plan given one marginal.

    Returns {atom index: (other-side indices, conditional probabilities)}.
    Rows are normalized by the plan's own marginal mass so each is an exact
    probability vector; atoms with zero marginal mass are omitted (the
    disintegration is unique only a.e.).
    """
    if side not in ("source", "target"):
        raise ValueError("side must be 'source' or 'target'")
    own = plan.source_idx if side == "source" else plan.target_idx
    other = plan.target_idx if side == "source" else plan.source_idx
    rows: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for key in np.unique(own):
        sel = own == key
        total = math.fsum(plan.mass[sel])
        if total <= 0.0:
            continue
        rows[int(key)] = (other[sel].copy(), plan.mass[sel] / total)
    return rows


def brute_force_plan(a: WeightedCloud, b: WeightedCloud, p=2) -> TransportPlan:
    """Oracle: enumerate every vertex of the transportation polytope.

    BFS over feasible bases via simplex pivots (entering cell, cycle,
    theta-argmin leaving cell). Exponential in support size; restricted to
    supports of at most 5 atoms per side.
    """
    _check_pair(a, b, p)
    n, m = a.n, b.n
    if n > 5 or m > 5:
        raise ValueError(f"support too large for enumeration: {n}x{m}")
    cost = _cost_matrix(a, b, p).ravel()

    # northwest-corner starting basis (n + m - 1 cells, tree-structured)
    cells, flows = [], []
    ra = list(a.weights)
    rb = list(b.weights)
    i = j = 0
    while len(cells) < n + m - 1:
        q = min(ra[i], rb[j])
        cells.append(i * m + j)
        flows.append(q)
        ra[i] -= q
        rb[j] -= q
        if ra[i] <= rb[j] and i < n - 1:
            i += 1
        else:
            j += 1

    def key_of(cs):
        k = 0
        for c in cs:
            k |= 1 << c
        return k

    seen = {key_of(cells)}
    stack = [(tuple(cells), tuple(flows))]
    best_cost = math.inf
    best = None
    all_cells = list(range(n * m))

    while stack:
        bcells, bflows = stack.pop()
        cst = math.fsum(f * cost[c] for c, f in zip(bcells, bflows))
        if cst < best_cost:
            best_cost = cst
            best = (bcells, bflows)
        bset = set(bcells)
        # tree structure: nodes are rows 0..n-1 and columns n..n+m-1
        adj = [[] for _ in range(n + m)]
        for eidx, c in enumerate(bcells):
            ri, cj = divmod(c, m)
            adj[ri].append((n + cj, eidx))
            adj[n + cj].append((ri, eidx))
        parent = [-1] * (n + m)
        parent_edge = [-1] * (n + m)
        depth = [0] * (n + m)
        parent[0] = 0
        order = [0]
        for v in order:
            for (u, eidx) in adj[v]:
                if parent[u] == -1:
                    parent[u] = v
                    parent_edge[u] = eidx
                    depth[u] = depth[v] + 1
                    order.append(u)
        key0 = key_of(bcells)
        for cell in all_cells:
            if cell in bset:
                continue
            ri, cj = divmod(cell, m)
            uu, vv = ri, n + cj
            path_u, path_v = [], []
            while depth[uu] > depth[vv]:
                path_u.append(parent_edge[uu])
                uu = parent[uu]
            while depth[vv] > depth[uu]:
                path_v.append(parent_edge[vv])
                vv = parent[vv]
            while uu != vv:
                path_u.append(parent_edge[uu])
                uu = parent[uu]
                path_v.append(parent_edge[vv])
                vv = parent[vv]
            path = path_u + path_v[::-1]
            # flow decreases on even-position edges counted from the row end
            theta = None
            argmins = []
            for k in range(0, len(path), 2):
                f = bflows[path[k]]
                if theta is None or f < theta - 1e-15:
                    theta = f
                    argmins = [k]
                elif f <= theta + 1e-15:
                    argmins.append(k)
            if theta is None:
                continue
            for k_leave in argmins:
                leave = path[k_leave]
                nk = (key0 & ~(1 << bcells[leave])) | (1 << cell)
                if nk in seen:
                    continue
                seen.add(nk)
                nf = list(bflows)
                for k, eidx in enumerate(path):
                    nf[eidx] += theta if k % 2 else -theta
                ncells = list(bcells)
                ncells[leave] = cell
                nf[leave] = theta
                stack.append((tuple(ncells), tuple(nf)))

    bcells, bflows = best
    si, ti, q = [], [], []
    for c, f in zip(bcells, bflows):
        if f > 0.0:
            si.append(c // m)
            ti.append(c % m)
            q.append(f)
    if not si:  # all-degenerate corner case: keep one zero entry
        si, ti, q = [bcells[0] // m], [bcells[0] % m], [0.0]
    return _finish(a, b, si, ti, q, p)
