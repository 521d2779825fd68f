"""Finite weighted-atom representations of probability measures.

A measure on R^d is a weighted point cloud; a measure on a lattice node set
is a mass vector. Continuous densities must be pre-sampled before entering
the toolkit. All values are immutable after construction and safe to share
across threads.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

MASS_TOL = 1e-12
LATTICE_MASS_TOL = 1e-9
NEG_TOL = -1e-12


def _freeze(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class WeightedCloud:
    """Probability measure on R^d as a finite weighted point set.

    Weights are nonnegative and sum to 1 within 1e-12. Negative dust down to
    -1e-12 (integrator undershoot) is clamped to 0 at construction.
    """

    points: np.ndarray  # (n, d)
    weights: np.ndarray  # (n,)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if pts.ndim != 2:
            raise ValueError(f"points must be (n, d), got shape {pts.shape}")
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(w) != len(pts):
            raise ValueError(f"{len(pts)} points but {len(w)} weights")
        if len(w) == 0:
            raise ValueError("empty cloud")
        if w.min(initial=0.0) < NEG_TOL:
            raise ValueError(f"negative weight {w.min():.3e}")
        w = np.maximum(w, 0.0)
        total = math.fsum(w)
        if abs(total - 1.0) > MASS_TOL:
            raise ValueError(f"weights sum to {total!r}, not 1")
        object.__setattr__(self, "points", _freeze(pts))
        object.__setattr__(self, "weights", _freeze(w))

    @property
    def n(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    @classmethod
    def dirac(cls, point) -> "WeightedCloud":
        p = np.asarray(point, dtype=float).reshape(1, -1)
        return cls(p, np.ones(1))


@dataclass(frozen=True, eq=False)
class LatticeGrid:
    """Ordered node set S = box ∩ h·Z^d with a reverse integer-coordinate index.

    ``box`` is the inflated domain the nodes live in (rows: lower, upper
    corner); nodes are pairwise distinct and each equals h times an integer
    vector.
    """

    nodes: np.ndarray  # (n, d)
    spacing: float
    box: np.ndarray  # (2, d)

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim == 1:
            nodes = nodes.reshape(-1, 1)
        box = np.asarray(self.box, dtype=float)
        if box.ndim == 1:
            box = box.reshape(2, 1)
        if self.spacing <= 0:
            raise ValueError("spacing must be positive")
        if box.shape != (2, nodes.shape[1]):
            raise ValueError("box must be (2, d)")
        lo, hi = box[0], box[1]
        tol = 1e-9 * self.spacing
        if np.any(nodes < lo - tol) or np.any(nodes > hi + tol):
            raise ValueError("node outside box")
        index = {}
        for row, node in enumerate(nodes):
            key = tuple(int(round(c / self.spacing)) for c in node)
            if key in index:
                raise ValueError(f"duplicate node at row {row}")
            index[key] = row
        object.__setattr__(self, "nodes", _freeze(nodes))
        object.__setattr__(self, "box", _freeze(box))
        object.__setattr__(self, "_index", index)

    @property
    def n(self) -> int:
        return len(self.nodes)

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    def locate(self, int_coords) -> int:
        """Row of the node with the given integer grid coordinates, -1 if absent."""
        return self._index.get(tuple(int(c) for c in int_coords), -1)

    @classmethod
    def regular(cls, lo, hi, spacing: float, collar: float = 0.0) -> "LatticeGrid":
        """Build ([lo, hi] + collar) ∩ spacing·Z^d for an axis-aligned box."""
        lo = np.asarray(lo, dtype=float).reshape(-1)
        hi = np.asarray(hi, dtype=float).reshape(-1)
        if np.any(hi <= lo):
            raise ValueError("box must have positive extent")
        h = float(spacing)
        if h <= 0:
            raise ValueError("spacing must be positive")
        lo_c, hi_c = lo - collar, hi + collar
        axes = []
        for i in range(len(lo)):
            k0 = math.ceil((lo_c[i] - 1e-9 * h) / h)
            k1 = math.floor((hi_c[i] + 1e-9 * h) / h)
            if k1 < k0:
                raise ValueError(f"no lattice node in dimension {i}")
            axes.append(np.arange(k0, k1 + 1))
        mesh = np.meshgrid(*axes, indexing="ij")
        ks = np.stack([m.ravel() for m in mesh], axis=1)
        return cls(ks * h, h, np.stack([lo_c, hi_c]))


@dataclass(frozen=True, eq=False)
class LatticeDistribution:
    """Probability mass vector over the nodes of a LatticeGrid.

    Entries may dip to -1e-12 (explicit ODE steps undershoot); they are kept
    as-is internally and clamped to 0 on export. Total mass must be 1 within
    1e-9.
    """

    mu: np.ndarray  # (n,)

    def __post_init__(self):
        mu = np.asarray(self.mu, dtype=float).reshape(-1)
        if len(mu) == 0:
            raise ValueError("empty distribution")
        if mu.min() < NEG_TOL:
            raise ValueError(f"entry below tolerance: {mu.min():.3e}")
        total = math.fsum(mu)
        if abs(total - 1.0) > LATTICE_MASS_TOL:
            raise ValueError(f"mass {total!r}, not 1")
        object.__setattr__(self, "mu", _freeze(mu))

    @property
    def n(self) -> int:
        return len(self.mu)

    def clamped(self) -> np.ndarray:
        """Export form: negative dust set to 0."""
        return np.maximum(self.mu, 0.0)

    @classmethod
    def dirac(cls, n: int, node_index: int) -> "LatticeDistribution":
        mu = np.zeros(n)
        mu[node_index] = 1.0
        return cls(mu)


def embed_lattice(mu: LatticeDistribution, grid: LatticeGrid) -> WeightedCloud:
    """Embed a node-mass vector as the weighted cloud sum_x delta_x mu_x.

    Zero-mass nodes are dropped and the exported weights are renormalized to
    unit mass (a valid input may carry 1 +/- 1e-9 of mass; the cloud
    contract is 1e-12). For exactly-unit inputs the weights are reproduced
    bit-exactly.
    """
    if mu.n != grid.n:
        raise ValueError(f"distribution over {mu.n} nodes, grid has {grid.n}")
    w = mu.clamped()
    mask = w > 0.0
    if not mask.any():
        raise ValueError("no positive mass to embed")
    w = w[mask]
    total = math.fsum(w)
    if total != 1.0:
        w = w / total
    return WeightedCloud(grid.nodes[mask], w)


def second_moment(m: WeightedCloud) -> float:
    """Root weighted second moment (norms taken about the origin)."""
    sq = np.einsum("ij,ij->i", m.points, m.points)
    return math.sqrt(max(float(m.weights @ sq), 0.0))


def covering_radius(grid: LatticeGrid, samples) -> float:
    """max over samples of the distance to the nearest grid node.

    For a regular grid and a dense sample of the domain this estimates how
    well the node set covers it; the regular construction guarantees
    (sqrt(d)/2) * spacing.
    """
    pts = np.asarray(samples, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    if len(pts) == 0:
        raise ValueError("empty sample set")
    if pts.shape[1] != grid.dim:
        raise ValueError("sample dimension mismatch")
    worst = 0.0
    for start in range(0, len(pts), 1024):
        chunk = pts[start:start + 1024]
        d2 = np.sum((chunk[:, None, :] - grid.nodes[None, :, :]) ** 2, axis=2)
        worst = max(worst, float(np.sqrt(d2.min(axis=1)).max()))
    return worst


def _clusters_within(points: np.ndarray, idx: np.ndarray, tol: float):
    """Single-linkage clusters of points[idx] under the tol threshold."""
    k = len(idx)
    parent = list(range(k))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    # bucket by grid cell of side tol; only same/adjacent cells can pair
    if tol > 0:
        buckets = {}
        for j in range(k):
            key = tuple(int(math.floor(c / tol)) for c in points[idx[j]])
            buckets.setdefault(key, []).append(j)
        offsets = None
        d = points.shape[1]
        from itertools import product
        offsets = list(product((-1, 0, 1), repeat=d))
        for key, members in buckets.items():
            cands = []
            for off in offsets:
                cands.extend(buckets.get(tuple(key[i] + off[i] for i in range(d)), []))
            for j in members:
                pj = points[idx[j]]
                for l in cands:
                    if l <= j:
                        continue
                    if np.linalg.norm(points[idx[l]] - pj) <= tol:
                        union(j, l)
    else:
        seen = {}
        for j in range(k):
            key = points[idx[j]].tobytes()
            if key in seen:
                union(seen[key], j)
            else:
                seen[key] = j

    groups = {}
    for j in range(k):
        groups.setdefault(find(j), []).append(j)
    return [np.asarray([idx[j] for j in members]) for _, members in sorted(groups.items())]


def coalesce(m: WeightedCloud, tol: float) -> WeightedCloud:
    """Merge points within tol into their weight-barycenters.

    Preserves total mass and the weighted mean; never increases the point
    count; guarantees W2(input, output) <= tol. Single-linkage chains whose
    members stray farther than tol from the cluster barycenter are re-split
    with tol/2 so the W2 guarantee is unconditional.
    """
    if tol < 0:
        raise ValueError("tol must be >= 0")

    out_points = []
    out_weights = []

    def emit(members: np.ndarray, level_tol: float):
        if len(members) == 1:
            out_points.append(m.points[members[0]])
            out_weights.append(m.weights[members[0]])
            return
        w = m.weights[members]
        total = math.fsum(w)
        if total <= 0.0:
            bary = m.points[members[0]]
        else:
            bary = (w @ m.points[members]) / total
        radius = float(np.linalg.norm(m.points[members] - bary, axis=1).max())
        if radius > tol and level_tol > 0:
            for sub in _clusters_within(m.points, members, level_tol / 2):
                emit(sub, level_tol / 2)
            return
        out_points.append(bary)
        out_weights.append(total)

    for cluster in _clusters_within(m.points, np.arange(m.n), tol):
        emit(cluster, tol)

    return WeightedCloud(np.asarray(out_points), np.asarray(out_weights))
