"""Relaxed controls, control distributions, feedback policies and their algebra.

A relaxed control is a measure on time x control-set whose time marginal is
Lebesgue; here the control set is a finite atom set and the control is
piecewise constant in time, so it reduces to one probability vector per time
cell. Distributions of controls pair initial states with relaxed controls;
feedback policies attach one relaxed control to every lattice node.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CouplingError
from .measures import WeightedCloud, _freeze

TIME_TOL = 1e-12
WEIGHT_TOL = 1e-12
MATCH_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class ControlAtomSet:
    """Finite discretization of the control set, with its metric table."""

    atoms: np.ndarray  # (k, du)
    metric: np.ndarray  # (k, k)

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms.reshape(-1, 1)
        if len(atoms) == 0:
            raise ValueError("empty atom set")
        metric = np.asarray(self.metric, dtype=float)
        if metric.shape != (len(atoms), len(atoms)):
            raise ValueError("metric table shape mismatch")
        if not np.allclose(metric, metric.T, atol=1e-12) or np.abs(np.diag(metric)).max() > 1e-12:
            raise ValueError("metric must be symmetric with zero diagonal")
        object.__setattr__(self, "atoms", _freeze(atoms))
        object.__setattr__(self, "metric", _freeze(metric))

    @property
    def n(self) -> int:
        return len(self.atoms)

    @classmethod
    def from_points(cls, atoms) -> "ControlAtomSet":
        a = np.asarray(atoms, dtype=float)
        if a.ndim == 1:
            a = a.reshape(-1, 1)
        diff = a[:, None, :] - a[None, :, :]
        return cls(a, np.sqrt(np.einsum("ijk,ijk->ij", diff, diff)))


@dataclass(frozen=True, eq=False)
class RelaxedControl:
    """Time-cell measure on [s, r] x U with Lebesgue time marginal.

    ``cell_weights[m]`` is the probability vector over atoms on
    [time_grid[m], time_grid[m+1]); the last cell is closed on the right.
    """

    time_grid: np.ndarray  # (M+1,)
    cell_weights: np.ndarray  # (M, k)
    atoms: ControlAtomSet

    def __post_init__(self):
        grid = np.asarray(self.time_grid, dtype=float).reshape(-1)
        w = np.asarray(self.cell_weights, dtype=float)
        if w.ndim == 1:
            w = w.reshape(1, -1)
        if len(grid) < 2 or np.any(np.diff(grid) <= 0):
            raise ValueError("time grid must be strictly increasing with >= 2 points")
        if w.shape != (len(grid) - 1, self.atoms.n):
            raise ValueError(f"cell weights must be ({len(grid) - 1}, {self.atoms.n})")
        if w.min() < -WEIGHT_TOL:
            raise ValueError(f"negative cell weight {w.min():.3e}")
        w = np.maximum(w, 0.0)
        sums = np.array([math.fsum(row) for row in w])
        if np.abs(sums - 1.0).max() > WEIGHT_TOL:
            raise ValueError("cell weights must sum to 1")
        object.__setattr__(self, "time_grid", _freeze(grid))
        object.__setattr__(self, "cell_weights", _freeze(w))

    @property
    def start(self) -> float:
        return float(self.time_grid[0])

    @property
    def end(self) -> float:
        return float(self.time_grid[-1])

    def cell_index(self, t: float) -> int:
        if t < self.start - MATCH_TOL or t > self.end + MATCH_TOL:
            raise ValueError(f"t={t} outside horizon [{self.start}, {self.end}]")
        idx = int(np.searchsorted(self.time_grid, t, side="right")) - 1
        return min(max(idx, 0), len(self.cell_weights) - 1)

    def weights_at(self, t: float) -> np.ndarray:
        return self.cell_weights[self.cell_index(t)]

    @classmethod
    def dirac(cls, atoms: ControlAtomSet, atom_index: int, s: float, r: float) -> "RelaxedControl":
        w = np.zeros((1, atoms.n))
        w[0, atom_index] = 1.0
        return cls(np.array([s, r]), w, atoms)

    @classmethod
    def uniform(cls, atoms: ControlAtomSet, s: float, r: float) -> "RelaxedControl":
        return cls(np.array([s, r]), np.full((1, atoms.n), 1.0 / atoms.n), atoms)


def _same_atoms(controls) -> ControlAtomSet:
    first = controls[0].atoms
    for c in controls[1:]:
        if c.atoms is not first and not np.array_equal(c.atoms.atoms, first.atoms):
            raise ValueError("controls use different atom sets")
    return first


def concat_controls(xi0: RelaxedControl, xi1: RelaxedControl) -> RelaxedControl:
    """Concatenation: xi0's cells before the seam, xi1's after.

    The horizons must abut at the seam (gap/overlap beyond 1e-12 is an
    error); the seam breakpoint keeps xi0's end value.
    """
    atoms = _same_atoms([xi0, xi1])
    if abs(xi0.end - xi1.start) > TIME_TOL:
        raise ValueError(f"horizons do not abut: {xi0.end} vs {xi1.start}")
    grid = np.concatenate([xi0.time_grid, xi1.time_grid[1:]])
    weights = np.vstack([xi0.cell_weights, xi1.cell_weights])
    return RelaxedControl(grid, weights, atoms)


def restrict(xi: RelaxedControl, s: float, r: float) -> RelaxedControl:
    """Clip a control to [s, r], splitting cells at the cut points."""
    if r - s <= TIME_TOL:
        raise ValueError("empty restriction interval")
    if s < xi.start - MATCH_TOL or r > xi.end + MATCH_TOL:
        raise ValueError(f"[{s}, {r}] not inside [{xi.start}, {xi.end}]")
    interior = xi.time_grid[(xi.time_grid > s + TIME_TOL) & (xi.time_grid < r - TIME_TOL)]
    grid = np.concatenate([[s], interior, [r]])
    mids = 0.5 * (grid[:-1] + grid[1:])
    weights = np.vstack([xi.weights_at(t) for t in mids])
    return RelaxedControl(grid, weights, xi.atoms)


def _merged_grid(controls) -> np.ndarray:
    pts = np.unique(np.concatenate([c.time_grid for c in controls]))
    keep = [pts[0]]
    for t in pts[1:]:
        if t - keep[-1] > TIME_TOL:
            keep.append(t)
    return np.asarray(keep)


def mix_controls(weights, controls) -> RelaxedControl:
    """Convex combination of controls cellwise on a merged time grid.

    Relaxed controls enter transition rates linearly, so mixing weights and
    mixing rates commute; this realizes plan-conditional averaging.
    """
    w = np.asarray(weights, dtype=float).reshape(-1)
    controls = list(controls)
    if len(w) != len(controls) or len(controls) == 0:
        raise ValueError("need one weight per control")
    if w.min() < -WEIGHT_TOL:
        raise ValueError("negative mixing weight")
    if abs(math.fsum(w) - 1.0) > WEIGHT_TOL:
        raise ValueError("mixing weights must sum to 1")
    atoms = _same_atoms(controls)
    starts = [c.start for c in controls]
    ends = [c.end for c in controls]
    if max(starts) - min(starts) > TIME_TOL or max(ends) - min(ends) > TIME_TOL:
        raise ValueError("controls must share a common horizon")
    grid = _merged_grid(controls)
    mids = 0.5 * (grid[:-1] + grid[1:])
    cells = np.zeros((len(mids), atoms.n))
    for wi, c in zip(w, controls):
        if wi == 0.0:
            continue
        cells += wi * np.vstack([c.weights_at(t) for t in mids])
    return RelaxedControl(grid, cells, atoms)


def step_equal(a: RelaxedControl, b: RelaxedControl, tol: float = 0.0) -> bool:
    """Compare two controls as step functions on a merged grid."""
    if abs(a.start - b.start) > TIME_TOL or abs(a.end - b.end) > TIME_TOL:
        return False
    grid = _merged_grid([a, b])
    for t in 0.5 * (grid[:-1] + grid[1:]):
        if np.abs(a.weights_at(t) - b.weights_at(t)).max() > tol:
            return False
    return True


@dataclass(frozen=True, eq=False)
class ControlDistribution:
    """Weighted list of (initial state, relaxed control) pairs.

    The state marginal is the base cloud; all controls share one horizon.
    """

    weights: np.ndarray  # (n,)
    states: np.ndarray  # (n, d)
    controls: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 1:
            states = states.reshape(-1, 1)
        controls = tuple(self.controls)
        if not (len(w) == len(states) == len(controls)) or len(w) == 0:
            raise ValueError("items must align and be nonempty")
        if w.min() < -WEIGHT_TOL:
            raise ValueError("negative item weight")
        w = np.maximum(w, 0.0)
        if abs(math.fsum(w) - 1.0) > WEIGHT_TOL:
            raise ValueError("item weights must sum to 1")
        _same_atoms(controls)
        starts = [c.start for c in controls]
        ends = [c.end for c in controls]
        if max(starts) - min(starts) > TIME_TOL or max(ends) - min(ends) > TIME_TOL:
            raise ValueError("items must share one horizon")
        object.__setattr__(self, "weights", _freeze(w))
        object.__setattr__(self, "states", _freeze(states))
        object.__setattr__(self, "controls", controls)

    @property
    def n(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def start(self) -> float:
        return self.controls[0].start

    @property
    def end(self) -> float:
        return self.controls[0].end

    @property
    def atoms(self) -> ControlAtomSet:
        return self.controls[0].atoms

    def base_cloud(self) -> WeightedCloud:
        return WeightedCloud(self.states, self.weights)

    @classmethod
    def single_control(cls, cloud: WeightedCloud, control: RelaxedControl) -> "ControlDistribution":
        return cls(cloud.weights, cloud.points, (control,) * cloud.n)


def transfer(alpha: ControlDistribution, s: float, flow) -> ControlDistribution:
    """Move every item's initial condition along its own trajectory to time s.

    ``flow`` must be the motion of ``alpha`` from its start; controls are
    clipped to [s, end]. s equal to the start returns an equal distribution.
    """
    if s < alpha.start - MATCH_TOL or s >= alpha.end - TIME_TOL:
        raise ValueError(f"s={s} outside [{alpha.start}, {alpha.end})")
    if abs(s - alpha.start) <= TIME_TOL:
        return alpha
    states = flow.states_at(s)
    if states.shape != alpha.states.shape:
        raise ValueError("flow does not match the distribution's items")
    seen = {}
    controls = []
    for c in alpha.controls:
        key = id(c)
        if key not in seen:
            seen[key] = restrict(c, s, alpha.end)
        controls.append(seen[key])
    return ControlDistribution(alpha.weights, states, tuple(controls))


def restrict_distribution(alpha: ControlDistribution, s: float, r: float, flow) -> ControlDistribution:
    """Transfer to time s, then clip every control to [s, r]."""
    moved = transfer(alpha, s, flow)
    seen = {}
    controls = []
    for c in moved.controls:
        key = id(c)
        if key not in seen:
            seen[key] = restrict(c, s, r)
        controls.append(seen[key])
    return ControlDistribution(moved.weights, moved.states, tuple(controls))


def concat_distributions(alpha0: ControlDistribution, alpha1: ControlDistribution,
                         s1: float, flow) -> ControlDistribution:
    """Concatenate distributions across the seam s1.

    Each alpha0 item is continued by alpha1's conditional distribution of
    controls at that item's endpoint under ``flow`` (the motion of alpha0).
    Endpoints are matched to alpha1's base atoms within 1e-9.
    """
    if abs(alpha0.end - s1) > TIME_TOL or abs(alpha1.start - s1) > TIME_TOL:
        raise ValueError("distribution horizons do not abut at the seam")
    endpoints = flow.states_at(s1)
    if endpoints.shape != alpha0.states.shape:
        raise ValueError("flow does not match alpha0's items")

    from .transport import wasserstein  # deferred: transport depends on measures only

    gap = wasserstein(WeightedCloud(endpoints, alpha0.weights), alpha1.base_cloud(), 2)
    if gap > MATCH_TOL:
        raise CouplingError("alpha1's base cloud does not match the flow at the seam", gap=gap)

    # conditional distribution of alpha1's controls given its initial state
    groups: dict[bytes, list[int]] = {}
    for j in range(alpha1.n):
        groups.setdefault(alpha1.states[j].tobytes(), []).append(j)
    group_states = np.vstack([alpha1.states[members[0]] for members in groups.values()])
    group_items = list(groups.values())

    weights, states, controls = [], [], []
    for i in range(alpha0.n):
        d2 = np.einsum("ij,ij->i", group_states - endpoints[i], group_states - endpoints[i])
        g = int(np.argmin(d2))
        if math.sqrt(d2[g]) > MATCH_TOL:
            raise CouplingError(
                f"item {i}: endpoint has no alpha1 atom within 1e-9", gap=math.sqrt(d2[g]))
        members = group_items[g]
        total = math.fsum(alpha1.weights[j] for j in members)
        for j in members:
            cond = alpha1.weights[j] / total if total > 0 else 1.0 / len(members)
            weights.append(alpha0.weights[i] * cond)
            states.append(alpha0.states[i])
            controls.append(concat_controls(alpha0.controls[i], alpha1.controls[j]))
    return ControlDistribution(np.asarray(weights), np.asarray(states), tuple(controls))


@dataclass(frozen=True, eq=False)
class FeedbackPolicy:
    """One relaxed control per lattice node, sharing a common horizon."""

    controls: tuple

    def __post_init__(self):
        controls = tuple(self.controls)
        if not controls:
            raise ValueError("policy must cover at least one node")
        _same_atoms(controls)
        starts = [c.start for c in controls]
        ends = [c.end for c in controls]
        if max(starts) - min(starts) > TIME_TOL or max(ends) - min(ends) > TIME_TOL:
            raise ValueError("all node controls must share the horizon")
        object.__setattr__(self, "controls", controls)
        grid = _merged_grid(controls)
        mids = 0.5 * (grid[:-1] + grid[1:])
        unique: dict[int, np.ndarray] = {}
        rows = []
        for c in controls:
            key = id(c)
            if key not in unique:
                unique[key] = np.vstack([c.weights_at(t) for t in mids])
            rows.append(unique[key])
        table = np.stack(rows, axis=1)  # (cells, nodes, atoms)
        object.__setattr__(self, "_grid", _freeze(grid))
        object.__setattr__(self, "_table", _freeze(table))

    @property
    def n_nodes(self) -> int:
        return len(self.controls)

    @property
    def atoms(self) -> ControlAtomSet:
        return self.controls[0].atoms

    @property
    def start(self) -> float:
        return float(self._grid[0])

    @property
    def end(self) -> float:
        return float(self._grid[-1])

    @property
    def breakpoints(self) -> np.ndarray:
        return self._grid

    def weights_matrix_at(self, t: float) -> np.ndarray:
        """(n_nodes, n_atoms) cell weights at time t."""
        if t < self.start - MATCH_TOL or t > self.end + MATCH_TOL:
            raise ValueError(f"t={t} outside policy horizon")
        idx = int(np.searchsorted(self._grid, t, side="right")) - 1
        idx = min(max(idx, 0), self._table.shape[0] - 1)
        return self._table[idx]

    @classmethod
    def constant(cls, n_nodes: int, control: RelaxedControl) -> "FeedbackPolicy":
        return cls((control,) * n_nodes)


def concat_policies(p0: FeedbackPolicy, p1: FeedbackPolicy) -> FeedbackPolicy:
    if p0.n_nodes != p1.n_nodes:
        raise ValueError("policies cover different node sets")
    return FeedbackPolicy(tuple(concat_controls(a, b) for a, b in zip(p0.controls, p1.controls)))
