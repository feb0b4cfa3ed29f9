"""First and second Steklov eigenpairs of the p-Laplacian.

The first eigenpair minimizes the Rayleigh quotient

    R(u) = (||grad u||_p^p + ||u||_p^p) / ||u||_{p, boundary}^p

by descent along the H^1 (Sobolev) gradient with Armijo backtracking and
renormalization onto the unit boundary sphere. The second eigenvalue is the
mountain-pass level over sphere paths joining -u_1 and u_1, computed with a
climbing-image string method.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import splu

from .errors import ConvergenceError, DegenerateInputError, InvalidArgumentError
from .mesh import (DEFAULT_DELTA, FeField, Mesh, apply_p_operator, integrate_boundary,
                   linear_operator_matrix, nodal_values, p_energy, signed_power)
from .pathopt import StringOptions, run_string


@dataclass
class EigenOptions:
    tol: float = 1e-10
    max_iter: int = 50000
    window: int = 5
    step: float = 0.5
    armijo: float = 1e-4
    # the eigenvalue settles quadratically faster than the eigenfunction, so
    # also require a small eigen-equation residual before stopping
    residual_tol: float = 1e-10
    seed: int = 0
    delta: float = DEFAULT_DELTA
    quadrature: str = "vertex"


@dataclass
class PathOptions:
    m: int = 33
    tol: float = 1e-10
    max_sweeps: int = 20000
    window: int = 5
    step: float = 0.5
    climb_step: float = 0.5
    energy_weight: float = 1.0
    seed: int = 0
    delta: float = DEFAULT_DELTA
    quadrature: str = "vertex"


@dataclass
class SteklovEigenpair:
    p: float
    eigenvalue: float
    eigenfunction: FeField
    iterations: int = 0
    converged: bool = True
    history: list = field(default_factory=list, repr=False)


@dataclass
class SpherePath:
    """Discrete path on the unit boundary sphere; rows of ``states`` are nodal arrays."""

    mesh: Mesh
    p: float
    states: np.ndarray
    values: np.ndarray
    sweeps: int = 0
    wall_time: float = 0.0

    @property
    def max_index(self) -> int:
        return int(np.argmax(self.values))

    def field(self, k: int) -> FeField:
        return FeField(self.mesh, self.states[k])


class _Rayleigh:
    """Rayleigh quotient, its gradient and the boundary normalization on one mesh."""

    def __init__(self, mesh, p, delta, quadrature):
        self.mesh, self.p, self.delta, self.quad = mesh, p, delta, quadrature
        self.bn, self.bw = mesh.boundary_nodes, mesh.boundary_weights
        self.P = linear_operator_matrix(mesh, quadrature)
        self._lu = splu(self.P)

    def denom(self, u):
        return float(self.bw @ np.abs(u[self.bn]) ** self.p)

    def value(self, u):
        den = self.denom(u)
        if den <= 0:
            raise DegenerateInputError("field has zero boundary trace")
        return self.p * p_energy(self.mesh, self.p, u, self.delta, self.quad) / den

    def grad(self, u):
        den = self.denom(u)
        R = self.value(u)
        g = self.p * apply_p_operator(self.mesh, self.p, u, self.delta, self.quad)
        g[self.bn] -= R * self.p * self.bw * signed_power(u[self.bn], self.p - 1)
        return g / den

    def solve(self, g):
        return self._lu.solve(g)

    def normalize(self, u):
        den = self.denom(u)
        if den <= 0:
            raise DegenerateInputError("cannot normalize a field with zero boundary trace")
        return u / den ** (1.0 / self.p)


def rayleigh_quotient(mesh: Mesh, p: float, u, delta: float = DEFAULT_DELTA,
                      quadrature: str = "vertex") -> float:
    """(||grad u||_p^p + ||u||_p^p) / ||u||_{p,boundary}^p."""
    u = nodal_values(mesh, u)
    den = integrate_boundary(mesh, u[mesh.boundary_nodes], p)
    if den <= 0:
        raise DegenerateInputError("rayleigh quotient undefined: zero boundary trace")
    return p * p_energy(mesh, p, u, delta, quadrature) / den


def first_eigenpair(mesh: Mesh, p: float, opts: EigenOptions | None = None) -> SteklovEigenpair:
    """Smallest Steklov eigenvalue and its positive, boundary-normalized eigenfunction.

    Starts from the constant field so iterates stay in the positive cone. Stops
    when the relative eigenvalue change stays below ``opts.tol`` for
    ``opts.window`` consecutive iterations and the max-norm residual of the
    eigen-equation is below ``opts.residual_tol``.

    Raises
    ------
    ConvergenceError
        If ``opts.max_iter`` is exhausted; ``partial`` holds the last eigenpair.
    """
    opts = opts or EigenOptions()
    if p <= 1:
        raise InvalidArgumentError(f"p must exceed 1, got {p}")
    rq = _Rayleigh(mesh, p, opts.delta, opts.quadrature)
    u = rq.normalize(np.ones(mesh.n_nodes))
    R = rq.value(u)
    hist = [R]
    small = flat = 0
    for it in range(1, opts.max_iter + 1):
        g = rq.grad(u)
        if small >= opts.window and np.abs(g).max() / p <= opts.residual_tol:
            break
        d = rq.solve(g)
        slope = float(g @ d)
        eta = opts.step
        slack = 1e-15 * abs(R)
        while True:
            cand = u - eta * d
            Rc = rq.value(cand)
            if Rc <= R - opts.armijo * eta * slope + slack:
                break
            eta *= 0.5
            if eta < 1e-14:
                cand, Rc = u, R
                break
        rel = abs(R - Rc) / abs(Rc)
        flat = flat + 1 if rel < 1e-14 else 0
        if flat >= 50 and small >= opts.window:
            break   # no further decrease is resolvable in floating point
        u, R = rq.normalize(cand), Rc
        hist.append(R)
        small = small + 1 if rel < opts.tol else 0
    else:
        raise ConvergenceError(
            f"first eigenpair not converged after {opts.max_iter} iterations",
            partial=_pack(mesh, p, rq, u, opts.max_iter, False, hist))
    return _pack(mesh, p, rq, u, it, True, hist)


def _pack(mesh, p, rq, u, it, ok, hist):
    if u[mesh.boundary_nodes].sum() < 0:
        u = -u
    u = rq.normalize(u)
    return SteklovEigenpair(p, rq.value(u), FeField(mesh, u), it, ok, hist)


def detour_field(mesh: Mesh, first: SteklovEigenpair, seed: int = 0) -> np.ndarray:
    """Smooth sign-changing field used as the midpoint of the initial sphere path.

    A seeded random affine function of the coordinates, with its boundary
    component along u_1 removed so the trace changes sign.
    """
    rng = np.random.default_rng(seed)
    coef = rng.standard_normal(mesh.dimension)
    coef /= np.linalg.norm(coef)
    w = (mesh.node_coords - 0.5) @ coef
    u1 = first.eigenfunction.values
    bn, bw, p = mesh.boundary_nodes, mesh.boundary_weights, first.p
    w = w - (bw @ (w[bn] * signed_power(u1[bn], p - 1))) * u1
    return w


def initial_sphere_path(mesh: Mesh, first: SteklovEigenpair, m: int = 33, seed: int = 0,
                        detour=None) -> np.ndarray:
    """Normalized piecewise-linear path -u_1 -> detour -> u_1 with ``m`` states."""
    rq = _Rayleigh(mesh, first.p, DEFAULT_DELTA, "vertex")
    u1 = first.eigenfunction.values
    w = detour_field(mesh, first, seed) if detour is None else nodal_values(mesh, detour)
    w = rq.normalize(w)
    t = np.linspace(0.0, 1.0, m)
    states = np.empty((m, mesh.n_nodes))
    for k, tk in enumerate(t):
        if tk <= 0.5:
            v = (1 - 2 * tk) * (-u1) + 2 * tk * w
        else:
            v = (2 - 2 * tk) * w + (2 * tk - 1) * u1
        states[k] = rq.normalize(v)
    states[0], states[-1] = -u1, u1
    return states


def second_eigenvalue_minimax(mesh: Mesh, p: float, first: SteklovEigenpair,
                              opts: PathOptions | None = None, init_path=None):
    """Minimax of the Rayleigh quotient over sphere paths from -u_1 to u_1.

    Returns ``(lambda_2, SpherePath)``; ``lambda_2`` is the maximum of R over the
    converged path, so it is an upper bound of the discrete inf-max value up to
    the string resolution.
    """
    opts = opts or PathOptions()
    if first.p != p:
        raise InvalidArgumentError("first eigenpair was computed for a different exponent")
    if opts.m < 3:
        raise InvalidArgumentError("path needs at least 3 states")
    t0 = time.perf_counter()
    rq = _Rayleigh(mesh, p, opts.delta, opts.quadrature)
    path = initial_sphere_path(mesh, first, opts.m, opts.seed) if init_path is None \
        else np.array(init_path, dtype=float)
    sopts = StringOptions(tol=opts.tol, max_sweeps=opts.max_sweeps, window=opts.window,
                          step=opts.step, climb_step=opts.climb_step,
                          energy_weight=opts.energy_weight)
    try:
        res = run_string(path, rq.value, rq.grad, rq.solve, rq.P, rq.normalize, sopts)
    except ConvergenceError as exc:
        res = exc.partial
        sp = SpherePath(mesh, p, res.path, res.values, res.sweeps, time.perf_counter() - t0)
        raise ConvergenceError("lambda_2 string did not converge", partial=sp) from exc
    sp = SpherePath(mesh, p, res.path, res.values, res.sweeps, time.perf_counter() - t0)
    return float(res.values.max()), sp
