"""Built-in control problems with analytically known bounds.

Every problem is a vector field on an axis-aligned box, bounded by a known
constant and Lipschitz in state and measure; the field is hard-clamped to
zero outside the box. User-defined problems go through the same dataclass
but carry sampled (unverified) constants.
"""
from __future__ import annotations

import inspect
import math

import numpy as np

from .controls import ControlAtomSet
from .dynamics import VectorFieldProblem
from .errors import ConfigError


def zero_field(dim=1, lo=-1.0, hi=1.0, horizon=1.0) -> VectorFieldProblem:
    """f = 0 everywhere; every motion is stationary."""

    def velocity(t, x, m, u):
        return np.zeros_like(x)

    return VectorFieldProblem(
        name="zero", dim=dim,
        velocity=velocity,
        box_lo=np.full(dim, float(lo)), box_hi=np.full(dim, float(hi)),
        bound=0.0, lipschitz=0.0,
        atoms=ControlAtomSet.from_points([[0.0]]),
        horizon=float(horizon),
    )


def constant_field(c=1.0, lo=-0.5, hi=2.0, horizon=1.0, dim=1) -> VectorFieldProblem:
    """Constant drift c on the interior of the box; translations in closed form."""
    cvec = np.full(dim, float(c)) if np.isscalar(c) else np.asarray(c, dtype=float)
    if len(cvec) != dim:
        raise ConfigError("constant_field: c must match dim")

    def velocity(t, x, m, u):
        return np.broadcast_to(cvec, x.shape).copy()

    return VectorFieldProblem(
        name="constant", dim=dim,
        velocity=velocity,
        box_lo=np.full(dim, float(lo)), box_hi=np.full(dim, float(hi)),
        bound=float(np.linalg.norm(cvec)), lipschitz=0.0,
        atoms=ControlAtomSet.from_points([[0.0]]),
        horizon=float(horizon),
    )


def attraction(pull=1.0, gain=0.25, lo=-2.0, hi=2.0, horizon=1.0) -> VectorFieldProblem:
    """1-D attraction to the ensemble mean plus an additive control term.

    f(t, x, m, u) = pull * (mean(m) - x) + gain * u with atoms {-1, 0, 1}.
    Under the zero atom two equal particles at +-a contract as a * exp(-pull t)
    (the mean is conserved at 0).
    """
    pull = float(pull)
    gain = float(gain)

    def velocity(t, x, m, u):
        return pull * (m.mean[0] - x) + gain * u[0]

    return VectorFieldProblem(
        name="attraction", dim=1,
        velocity=velocity,
        box_lo=np.array([float(lo)]), box_hi=np.array([float(hi)]),
        bound=pull * (float(hi) - float(lo)) + abs(gain),
        lipschitz=pull,
        atoms=ControlAtomSet.from_points([[-1.0], [0.0], [1.0]]),
        horizon=float(horizon),
    )


def rotation(omega=1.0, extent=1.0, horizon=1.0) -> VectorFieldProblem:
    """2-D rigid rotation about the origin; radii are conserved."""
    omega = float(omega)

    def velocity(t, x, m, u):
        out = np.empty_like(x)
        out[:, 0] = -omega * x[:, 1]
        out[:, 1] = omega * x[:, 0]
        return out

    e = float(extent)
    return VectorFieldProblem(
        name="rotation", dim=2,
        velocity=velocity,
        box_lo=np.array([-e, -e]), box_hi=np.array([e, e]),
        bound=omega * e * math.sqrt(2.0), lipschitz=omega,
        atoms=ControlAtomSet.from_points([[0.0]]),
        horizon=float(horizon),
    )


REGISTRY = {
    "zero": zero_field,
    "constant": constant_field,
    "attraction": attraction,
    "rotation": rotation,
}


def make_problem(name: str, params: dict | None = None) -> VectorFieldProblem:
    """Instantiate a registered problem from its name and JSON parameters."""
    if name not in REGISTRY:
        raise ConfigError(f"unknown problem {name!r}; known: {sorted(REGISTRY)}")
    factory = REGISTRY[name]
    params = dict(params or {})
    known = set(inspect.signature(factory).parameters)
    for key in params:
        if key not in known:
            raise ConfigError(f"problem_params.{key}: unknown parameter for {name!r}")
    return factory(**params)
