"""Box truncations of the boundary potential and the resulting energies.

Outside a box [lo, hi] the potential is replaced by its first-order expansion
at the clamped point,

    T(s) = g(tau) + g_s1(tau) (s1 - tau1) + g_s2(tau) (s2 - tau2),   tau = clamp(s, lo, hi),

which grows linearly, keeps T = g on the closed box, and is differentiable
away from the box faces. Infinite bounds switch truncation off.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import NamedTuple

import numpy as np
from scipy import sparse

from .errors import InvalidArgumentError, NumericOverflowError
from .mesh import (DEFAULT_DELTA, Mesh, SystemState, apply_p_operator, p_energy, p_hessian)
from .nonlinearity import NonlinearitySpec, eval_gradient, eval_hessian, eval_potential


class TruncationKind(str, Enum):
    PLUS = "plus"      # [0, u+]
    MINUS = "minus"    # [u-, 0]
    ZERO = "zero"      # [u-, u+]
    BOX = "box"        # arbitrary ordered bounds


class Bounds(NamedTuple):
    lower: tuple   # (u1-, u2-), scalars or arrays
    upper: tuple   # (u1+, u2+)


def box_limits(kind, bounds: Bounds):
    """(lo1, hi1, lo2, hi2) of the box selected by ``kind``."""
    kind = TruncationKind(kind)
    lo, hi = bounds.lower, bounds.upper
    if kind is TruncationKind.PLUS:
        return 0.0, hi[0], 0.0, hi[1]
    if kind is TruncationKind.MINUS:
        return lo[0], 0.0, lo[1], 0.0
    return lo[0], hi[0], lo[1], hi[1]


def project_box(kind, bounds: Bounds, s1, s2):
    """Component-wise clamp of (s1, s2) onto the kind's box."""
    lo1, hi1, lo2, hi2 = box_limits(kind, bounds)
    t1 = np.minimum(np.maximum(s1, lo1), hi1)
    t2 = np.minimum(np.maximum(s2, lo2), hi2)
    if np.ndim(t1) == 0 and np.ndim(t2) == 0:
        return float(t1), float(t2)
    return t1, t2


def _clamp(s, lo, hi):
    t = np.minimum(np.maximum(s, lo), hi)
    inside = (s >= lo) & (s <= hi)
    # an infinite bound never binds; keep (s - t) exactly zero there
    return t, inside


def box_potential(spec, x, s1, s2, lo1, hi1, lo2, hi2):
    s1, s2 = np.broadcast_arrays(np.asarray(s1, float), np.asarray(s2, float))
    t1, _ = _clamp(s1, lo1, hi1)
    t2, _ = _clamp(s2, lo2, hi2)
    g = eval_potential(spec, x, t1, t2)
    g1, g2 = eval_gradient(spec, x, t1, t2)
    out = g + g1 * (s1 - t1) + g2 * (s2 - t2)
    if not np.all(np.isfinite(out)):
        raise NumericOverflowError("non-finite truncated potential")
    return out


def box_gradient(spec, x, s1, s2, lo1, hi1, lo2, hi2):
    """Gradient of :func:`box_potential`; on a box face the inside value is used."""
    s1, s2 = np.broadcast_arrays(np.asarray(s1, float), np.asarray(s2, float))
    t1, in1 = _clamp(s1, lo1, hi1)
    t2, in2 = _clamp(s2, lo2, hi2)
    g1, g2 = eval_gradient(spec, x, t1, t2)
    d1, d2 = s1 - t1, s2 - t2
    if np.any(d1 != 0) or np.any(d2 != 0):
        h12 = eval_hessian(spec, x, t1, t2)[1]
        g1 = g1 + np.where(in1, h12 * d2, 0.0)
        g2 = g2 + np.where(in2, h12 * d1, 0.0)
    return g1, g2


def truncated_potential(kind, bounds: Bounds, spec: NonlinearitySpec, x, s1, s2):
    out = box_potential(spec, x, s1, s2, *box_limits(kind, bounds))
    return float(out) if np.ndim(out) == 0 else out


def truncated_gradient_selection(kind, bounds: Bounds, spec: NonlinearitySpec, x, s1, s2):
    g1, g2 = box_gradient(spec, x, s1, s2, *box_limits(kind, bounds))
    if np.ndim(g1) == 0:
        return float(g1), float(g2)
    return g1, g2


@dataclass(frozen=True, eq=False)
class EnergyContext:
    """Truncated energy on one mesh.

    ``lower``/``upper`` are the box limits per component at the boundary
    nodes (arrays of length ``len(mesh.boundary_nodes)``; +-inf disables a side).
    """

    mesh: Mesh
    spec: NonlinearitySpec
    lower: tuple
    upper: tuple
    kind: TruncationKind = TruncationKind.BOX
    delta: float = DEFAULT_DELTA
    quadrature: str = "vertex"

    def __post_init__(self):
        nb = len(self.mesh.boundary_nodes)
        lo = tuple(np.broadcast_to(np.asarray(v, float), (nb,)).copy() for v in self.lower)
        hi = tuple(np.broadcast_to(np.asarray(v, float), (nb,)).copy() for v in self.upper)
        for a, b in zip(lo, hi):
            if np.any(a > b):
                raise InvalidArgumentError("box bounds are not ordered (lower > upper somewhere)")
            a.flags.writeable = False
            b.flags.writeable = False
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "kind", TruncationKind(self.kind))

    @classmethod
    def from_kind(cls, mesh, spec, kind, positive=None, negative=None, **kw):
        """Context for plus/minus/zero truncation from the extremal solutions.

        ``positive``/``negative`` are SystemStates (or pairs of nodal arrays);
        only their boundary traces are used.
        """
        kind = TruncationKind(kind)
        bn = mesh.boundary_nodes

        def trace(state, i):
            v = state[i] if isinstance(state, (tuple, list)) else (state.u1, state.u2)[i].values
            return np.asarray(v, float)[bn]

        up = lo = None
        if kind in (TruncationKind.PLUS, TruncationKind.ZERO):
            if positive is None:
                raise InvalidArgumentError(f"{kind.value} truncation needs the positive bound")
            up = (trace(positive, 0), trace(positive, 1))
            if min(up[0].min(), up[1].min()) < 0:
                raise InvalidArgumentError("positive bound must be >= 0 on the boundary")
        if kind in (TruncationKind.MINUS, TruncationKind.ZERO):
            if negative is None:
                raise InvalidArgumentError(f"{kind.value} truncation needs the negative bound")
            lo = (trace(negative, 0), trace(negative, 1))
            if max(lo[0].max(), lo[1].max()) > 0:
                raise InvalidArgumentError("negative bound must be <= 0 on the boundary")
        if kind is TruncationKind.BOX:
            raise InvalidArgumentError("use EnergyContext(...) directly for a generic box")
        zero = np.zeros(len(bn))
        if kind is TruncationKind.PLUS:
            lo = (zero, zero)
        elif kind is TruncationKind.MINUS:
            up = (zero, zero)
        return cls(mesh, spec, lo, up, kind, **kw)

    @classmethod
    def untruncated(cls, mesh, spec, **kw):
        nb = len(mesh.boundary_nodes)
        return cls(mesh, spec, (np.full(nb, -np.inf),) * 2, (np.full(nb, np.inf),) * 2,
                   TruncationKind.BOX, **kw)

    @property
    def p(self):
        return self.spec.p

    @property
    def limits(self):
        return self.lower[0], self.upper[0], self.lower[1], self.upper[1]

    @property
    def boundary_points(self):
        return self.mesh.node_coords[self.mesh.boundary_nodes]

    def boundary_potential(self, s1, s2):
        return box_potential(self.spec, self.boundary_points, s1, s2, *self.limits)

    def boundary_gradient(self, s1, s2):
        return box_gradient(self.spec, self.boundary_points, s1, s2, *self.limits)

    def contains(self, state: SystemState, tol: float = 0.0) -> bool:
        return box_violation(self, state) <= tol


def _split(ctx, state):
    if isinstance(state, SystemState):
        if state.mesh is not ctx.mesh:
            raise InvalidArgumentError("state lives on a different mesh")
        return state.u1.values, state.u2.values
    x = np.asarray(state, dtype=float)
    n = ctx.mesh.n_nodes
    if x.shape != (2 * n,):
        raise InvalidArgumentError(f"flat state must have length {2 * n}, got {x.shape}")
    return x[:n], x[n:]


def energy(ctx: EnergyContext, state) -> float:
    """(1/p1)||u1||^p1 + (1/p2)||u2||^p2 - boundary integral of the truncated potential."""
    u1, u2 = _split(ctx, state)
    bn, bw = ctx.mesh.boundary_nodes, ctx.mesh.boundary_weights
    p1, p2 = ctx.p
    e = (p_energy(ctx.mesh, p1, u1, ctx.delta, ctx.quadrature)
         + p_energy(ctx.mesh, p2, u2, ctx.delta, ctx.quadrature))
    return float(e - bw @ ctx.boundary_potential(u1[bn], u2[bn]))


def energy_subgradient(ctx: EnergyContext, state) -> np.ndarray:
    """Flat covector (both components stacked) of the energy's gradient selection."""
    u1, u2 = _split(ctx, state)
    bn, bw = ctx.mesh.boundary_nodes, ctx.mesh.boundary_weights
    p1, p2 = ctx.p
    r1 = apply_p_operator(ctx.mesh, p1, u1, ctx.delta, ctx.quadrature)
    r2 = apply_p_operator(ctx.mesh, p2, u2, ctx.delta, ctx.quadrature)
    g1, g2 = ctx.boundary_gradient(u1[bn], u2[bn])
    r1[bn] -= bw * g1
    r2[bn] -= bw * g2
    return np.concatenate([r1, r2])


def boundary_hessian_blocks(ctx: EnergyContext, s1, s2, fd_step: float = 1e-6):
    """Per-node (h11, h12, h21, h22) of the truncated potential.

    Exact inside the box; off the box the linearized formula needs third
    derivatives, so those nodes use central differences of the gradient.
    """
    pts = ctx.boundary_points
    lo1, hi1, lo2, hi2 = ctx.limits
    inside = (s1 >= lo1) & (s1 <= hi1) & (s2 >= lo2) & (s2 <= hi2)
    h11, h12, h22 = (np.array(v, dtype=float, copy=True) for v in
                     eval_hessian(ctx.spec, pts, np.clip(s1, lo1, hi1), np.clip(s2, lo2, hi2)))
    h21 = h12.copy()
    out = np.nonzero(~inside)[0]
    if out.size:
        a, b = s1[out], s2[out]
        lim = (lo1[out], hi1[out], lo2[out], hi2[out])
        e1 = fd_step * np.maximum(1.0, np.abs(a))
        e2 = fd_step * np.maximum(1.0, np.abs(b))
        gp = box_gradient(ctx.spec, pts[out], a + e1, b, *lim)
        gm = box_gradient(ctx.spec, pts[out], a - e1, b, *lim)
        h11[out] = (gp[0] - gm[0]) / (2 * e1)
        h21[out] = (gp[1] - gm[1]) / (2 * e1)
        gp = box_gradient(ctx.spec, pts[out], a, b + e2, *lim)
        gm = box_gradient(ctx.spec, pts[out], a, b - e2, *lim)
        h12[out] = (gp[0] - gm[0]) / (2 * e2)
        h22[out] = (gp[1] - gm[1]) / (2 * e2)
    return h11, h12, h21, h22


def energy_hessian(ctx: EnergyContext, state) -> sparse.csc_matrix:
    """Sparse Hessian of the energy (2N x 2N) at ``state``."""
    u1, u2 = _split(ctx, state)
    mesh = ctx.mesh
    n = mesh.n_nodes
    bn, bw = mesh.boundary_nodes, mesh.boundary_weights
    p1, p2 = ctx.p
    A = sparse.block_diag([p_hessian(mesh, p1, u1, ctx.delta, ctx.quadrature),
                           p_hessian(mesh, p2, u2, ctx.delta, ctx.quadrature)], format="csc")
    h11, h12, h21, h22 = boundary_hessian_blocks(ctx, u1[bn], u2[bn])
    rows = np.concatenate([bn, bn, bn + n, bn + n])
    cols = np.concatenate([bn, bn + n, bn, bn + n])
    vals = -np.concatenate([bw * h11, bw * h12, bw * h21, bw * h22])
    return (A + sparse.csc_matrix((vals, (rows, cols)), shape=(2 * n, 2 * n))).tocsc()


def box_violation(ctx: EnergyContext, state) -> float:
    """Largest amount by which the boundary traces leave the box (0 if inside)."""
    u1, u2 = _split(ctx, state)
    bn = ctx.mesh.boundary_nodes
    lo1, hi1, lo2, hi2 = ctx.limits
    v = [np.maximum(lo1 - u1[bn], 0), np.maximum(u1[bn] - hi1, 0),
         np.maximum(lo2 - u2[bn], 0), np.maximum(u2[bn] - hi2, 0)]
    return float(max(a.max(initial=0.0) for a in v))
