"""Finite-difference consistency checks for potentials, truncations and energies.

Samples that fall within ``margin`` of a kink (zero, or a box face) are
redrawn so every comparison happens at a smooth point. Errors are reported
as |fd - exact| / max(|exact|, floor).
"""
from __future__ import annotations

import numpy as np

from .mesh import SystemState
from .nonlinearity import NonlinearitySpec, eval_gradient, eval_potential
from .truncation import (Bounds, EnergyContext, TruncationKind, energy, energy_subgradient,
                         truncated_gradient_selection, truncated_potential)

FLOOR = 1e-3


def _rel(fd, exact, floor=FLOOR):
    fd, exact = np.asarray(fd, float), np.asarray(exact, float)
    return np.abs(fd - exact) / np.maximum(np.abs(exact), floor)


def _smooth_points(rng, n, lo, hi, kinks, margin):
    """n points in [lo, hi]^2 whose coordinates stay ``margin`` away from ``kinks``."""
    out = np.empty((0, 2))
    kinks = np.asarray(kinks, float).reshape(-1, 1, 1) if len(kinks) else None
    while len(out) < n:
        pts = rng.uniform(lo, hi, size=(2 * n, 2))
        if kinks is not None:
            ok = np.all(np.abs(pts[None, :, :] - kinks) > margin, axis=(0, 2))
            pts = pts[ok]
        out = np.vstack([out, pts])
    return out[:n]


def _pair_fd(fun, s1, s2, h):
    d1 = (fun(s1 + h, s2) - fun(s1 - h, s2)) / (2 * h)
    d2 = (fun(s1, s2 + h) - fun(s1, s2 - h)) / (2 * h)
    return d1, d2


def potential_gradient_check(spec: NonlinearitySpec, samples: int = 1000, seed: int = 0,
                             h: float = 1e-6, x=None) -> float:
    """Max relative error of the analytic gradient of g against central differences."""
    rng = np.random.default_rng(seed)
    lo = 1.5 * min(spec.d)
    hi = 1.5 * max(spec.k)
    pts = _smooth_points(rng, samples, lo, hi, [0.0], 1e3 * h)
    s1, s2 = pts[:, 0], pts[:, 1]
    fd = _pair_fd(lambda a, b: eval_potential(spec, x, a, b), s1, s2, h)
    ex = eval_gradient(spec, x, s1, s2)
    return float(max(_rel(fd[0], ex[0]).max(), _rel(fd[1], ex[1]).max()))


def truncation_gradient_check(spec: NonlinearitySpec, kind, bounds: Bounds,
                              samples: int = 1000, seed: int = 0, h: float = 1e-6) -> float:
    """Same check for a truncated potential with scalar box bounds."""
    rng = np.random.default_rng(seed)
    kind = TruncationKind(kind)
    lows, highs = bounds
    kinks = [0.0, *lows, *highs]
    pts = _smooth_points(rng, samples, 1.5 * min(spec.d), 1.5 * max(spec.k), kinks, 1e3 * h)
    s1, s2 = pts[:, 0], pts[:, 1]
    fd = _pair_fd(lambda a, b: truncated_potential(kind, bounds, spec, None, a, b), s1, s2, h)
    ex = truncated_gradient_selection(kind, bounds, spec, None, s1, s2)
    return float(max(_rel(fd[0], ex[0]).max(), _rel(fd[1], ex[1]).max()))


def _smooth_state(ctx: EnergyContext, rng, scale, margin):
    """Random low-frequency state (cosine modes up to 3 per axis) with smooth boundary values."""
    mesh = ctx.mesh
    n, bn = mesh.n_nodes, mesh.boundary_nodes
    modes = np.cos(np.pi * mesh.node_coords[:, :, None] * np.arange(4)[None, None, :])
    basis = np.prod(modes, axis=1) if mesh.dimension == 1 else \
        np.einsum("ni,nj->nij", modes[:, 0], modes[:, 1]).reshape(n, -1)
    while True:
        coef = rng.uniform(-1.0, 1.0, (basis.shape[1], 2)) / (1.0 + np.arange(basis.shape[1]))[:, None]
        x = scale * (basis @ coef).T.ravel()
        near = False
        for i in (0, 1):
            t = x[i * n + bn]
            for k in (np.zeros(len(bn)), ctx.lower[i], ctx.upper[i]):
                fin = np.isfinite(k)
                near |= bool(np.any(np.abs(t[fin] - k[fin]) < margin))
        if not near:
            return x


def energy_gradient_check(ctx: EnergyContext, samples: int = 1000, seed: int = 0,
                          h: float = 1e-6, scale: float = 1.2) -> float:
    """Max relative error of directional derivatives of the energy.

    Each sample draws a smooth random state and a random unit direction and
    compares a central difference with the subgradient covector.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        x = _smooth_state(ctx, rng, scale, 1e3 * h)
        v = rng.standard_normal(x.shape)
        v /= np.linalg.norm(v)
        fd = (energy(ctx, x + h * v) - energy(ctx, x - h * v)) / (2 * h)
        ex = float(energy_subgradient(ctx, x) @ v)
        worst = max(worst, float(_rel(fd, ex)))
    return worst


def example_contexts(mesh, spec, positive: SystemState, negative: SystemState, **kw) -> dict:
    """Plus, minus and zero contexts built from the two extremal states."""
    return {kind: EnergyContext.from_kind(mesh, spec, kind, positive=positive, negative=negative,
                                          **kw) for kind in ("plus", "minus", "zero")}
