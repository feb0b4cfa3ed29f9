"""Solution pipelines: trapping-region solves, extremal constant-sign
solutions, scalar auxiliary problems, the explicit negative-energy path and
the mountain-pass search for a third solution.

All minimizations use one engine: descent preconditioned by the shifted
operator P + Lambda*B, where P is the p = 2 operator (stiffness + mass), B the
boundary mass, and Lambda bounds the negative curvature of the boundary
potential. For p = 2 a unit step of this scheme is the classical monotone
(sub/supersolution) iteration, so starting from a subsolution it climbs to
the minimal solution above it. Newton steps finish the solve once the
residual is small.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu, spsolve

from .errors import (ConvergenceError, DegenerateGeometryError, DegenerateInputError,
                     InvalidArgumentError, PreconditionError)
from .mesh import (DEFAULT_DELTA, FeField, Mesh, SystemState, apply_p_operator,
                   boundary_mass_matrix, linear_operator_matrix)
from .nonlinearity import (EigenLevels, NonlinearitySpec, check_hypotheses, eval_gradient,
                           eval_hessian, h2_radius)
from .pathopt import StringOptions, run_string
from .steklov import PathOptions, first_eigenpair, second_eigenvalue_minimax
from .truncation import EnergyContext, TruncationKind, box_violation, energy, energy_hessian, \
    energy_subgradient


@dataclass
class SolverOptions:
    tol: float = 1e-10              # Euclidean residual norm accepted as a solution
    max_iter: int = 20000
    armijo: float = 1e-4
    step: float = 1.0
    min_step: float = 1e-12
    newton: bool = True
    newton_switch: float = 1e-5     # residual below which Newton steps are tried
    restarts: int = 3
    eps0: float | None = None       # None: derived from the measured near-zero radius
    shrink: float = 0.5
    ladder_max: int = 40
    ladder_tol: float = 1e-9
    path_nodes: int = 33
    path_tol: float = 1e-10
    path_max_sweeps: int = 5000
    climb_step: float = 1.0
    saddle_factor: float = 10.0
    precondition_tol: float = 1e-8
    seed: int = 0
    delta: float = DEFAULT_DELTA
    quadrature: str = "vertex"

    def __post_init__(self):
        if not self.tol > 0:
            raise InvalidArgumentError(f"tolerance must be positive, got {self.tol}")
        if not 0 < self.shrink < 1:
            raise InvalidArgumentError(f"shrink factor must lie in (0, 1), got {self.shrink}")
        if self.path_nodes < 3:
            raise InvalidArgumentError("path needs at least 3 nodes")
        if self.max_iter < 1 or self.ladder_max < 1:
            raise InvalidArgumentError("iteration budgets must be at least 1")
        if self.eps0 is not None and not self.eps0 > 0:
            raise InvalidArgumentError(f"eps0 must be positive, got {self.eps0}")

    @property
    def saddle_tol(self) -> float:
        return self.tol * self.saddle_factor


@dataclass
class SolverReport:
    converged: bool
    iterations: int = 0
    residual_history: list = field(default_factory=list)
    energy_history: list = field(default_factory=list)
    wall_time: float = 0.0
    stage: str = ""
    details: dict = field(default_factory=dict)

    @property
    def residual(self) -> float:
        return self.residual_history[-1] if self.residual_history else float("nan")

    def summary(self) -> dict:
        return {"stage": self.stage, "converged": self.converged, "iterations": self.iterations,
                "residual": self.residual,
                "energy": self.energy_history[-1] if self.energy_history else None,
                "wall_time": self.wall_time,
                **{k: v for k, v in self.details.items() if k != "rungs"}}


@dataclass
class TrappingRegion:
    lower: SystemState
    upper: SystemState

    def __post_init__(self):
        if self.lower.mesh is not self.upper.mesh:
            raise InvalidArgumentError("region bounds live on different meshes")
        gap = min((self.upper.u1.values - self.lower.u1.values).min(),
                  (self.upper.u2.values - self.lower.u2.values).min())
        if gap < 0:
            raise InvalidArgumentError(f"region bounds are not ordered (gap {gap:.3e})")

    @property
    def mesh(self) -> Mesh:
        return self.lower.mesh

    def violation(self, state: SystemState) -> float:
        lo, hi, x = self.lower.flat(), self.upper.flat(), state.flat()
        return float(max(np.max(lo - x, initial=0.0), np.max(x - hi, initial=0.0)))


@dataclass
class ThreeSolutionResult:
    positive: SystemState
    negative: SystemState
    third: SystemState
    energies: tuple                 # E_0 at (positive, negative, third)
    mountain_pass_value: float
    residuals: tuple = ()
    ordering_margins: dict = field(default_factory=dict)
    reports: dict = field(default_factory=dict)
    eigen: dict = field(default_factory=dict)
    path: "NegativePath | None" = None
    final_path: np.ndarray | None = None
    final_path_energies: np.ndarray | None = None
    hypotheses: object = None


# ------------------------------------------------------------ basic pieces


def residual_norm(spec: NonlinearitySpec, state: SystemState, p1: float | None = None,
                  p2: float | None = None, delta: float = DEFAULT_DELTA,
                  quadrature: str = "vertex") -> float:
    """Euclidean norm of both discrete weak-form residuals with boundary data grad g."""
    mesh = state.mesh
    p1 = spec.p[0] if p1 is None else p1
    p2 = spec.p[1] if p2 is None else p2
    bn, bw = mesh.boundary_nodes, mesh.boundary_weights
    u1, u2 = state.u1.values, state.u2.values
    r1 = apply_p_operator(mesh, p1, u1, delta, quadrature)
    r2 = apply_p_operator(mesh, p2, u2, delta, quadrature)
    g1, g2 = eval_gradient(spec, mesh.node_coords[bn], u1[bn], u2[bn])
    r1[bn] -= bw * g1
    r2[bn] -= bw * g2
    return float(np.sqrt(r1 @ r1 + r2 @ r2))


def w1p_norm(mesh: Mesh, p: float, u) -> float:
    """Discrete (||grad u||_p^p + ||u||_p^p)^(1/p) with vertex quadrature."""
    u = np.asarray(u, dtype=float)
    gr = (mesh.gradient_matrix @ u).reshape(mesh.n_elements, mesh.dimension)
    grad_term = mesh.element_measures @ np.einsum("ij,ij->i", gr, gr) ** (p / 2)
    return float((grad_term + mesh.vertex_weights @ np.abs(u) ** p) ** (1.0 / p))


def curvature_shift(spec: NonlinearitySpec, lo=None, hi=None, grid: int = 65) -> float:
    """Upper bound (sampled, padded 10%) on the negative curvature of g over a box.

    The box defaults to [d1,k1] x [d2,k2]; infinite sides fall back to it.
    """
    def side(v, default, pick):
        if v is None:
            return default
        v = np.asarray(v, dtype=float)
        v = v[np.isfinite(v)]
        return pick(default, float(pick(v))) if v.size else default

    lo = (None, None) if lo is None else lo
    hi = (None, None) if hi is None else hi
    a1 = side(lo[0], spec.d[0], min)
    b1 = side(hi[0], spec.k[0], max)
    a2 = side(lo[1], spec.d[1], min)
    b2 = side(hi[1], spec.k[1], max)
    S1, S2 = np.meshgrid(np.linspace(a1, b1, grid), np.linspace(a2, b2, grid), indexing="ij")
    h11, h12, h22 = eval_hessian(spec, None, S1, S2)
    h11, h12, h22 = (np.broadcast_to(np.asarray(v, float), S1.shape) for v in (h11, h12, h22))
    mid = 0.5 * (h11 + h22)
    rad = np.sqrt(0.25 * (h11 - h22) ** 2 + h12 ** 2)
    lam_min = float((mid - rad).min())
    return 1.1 * max(0.0, -lam_min)


class _Problem:
    """Energy, gradient and Hessian of a truncated energy on a subset of unknowns."""

    def __init__(self, ctx: EnergyContext, free=None, fixed=None, shift=None):
        self.ctx = ctx
        n = ctx.mesh.n_nodes
        self.n = n
        self.free = np.arange(2 * n) if free is None else np.asarray(free)
        self.base = np.zeros(2 * n) if fixed is None else np.asarray(fixed, dtype=float).copy()
        if shift is None:
            shift = curvature_shift(ctx.spec, (ctx.lower[0], ctx.lower[1]),
                                    (ctx.upper[0], ctx.upper[1]))
        self.shift = shift
        P = linear_operator_matrix(ctx.mesh, ctx.quadrature)
        Pb = (P + shift * boundary_mass_matrix(ctx.mesh)).tocsc()
        M = sparse.block_diag([Pb, Pb], format="csc")
        self.metric = M[self.free][:, self.free].tocsc()
        self._lu = splu(self.metric)

    def full(self, x):
        z = self.base.copy()
        z[self.free] = x
        return z

    def value(self, x):
        return energy(self.ctx, self.full(x))

    def grad(self, x):
        return energy_subgradient(self.ctx, self.full(x))[self.free]

    def hess(self, x):
        H = energy_hessian(self.ctx, self.full(x))
        return H[self.free][:, self.free].tocsc()

    def solve(self, g):
        return self._lu.solve(g)


def _minimize(prob: _Problem, x0, opts: SolverOptions, stage: str, record: bool = False):
    """Preconditioned Armijo descent plus Newton finishing; returns (x, report, trajectory)."""
    t0 = time.perf_counter()
    rng = np.random.default_rng(opts.seed)
    x = np.array(x0, dtype=float)
    f = prob.value(x)
    g = prob.grad(x)
    res = float(np.linalg.norm(g))
    rep = SolverReport(False, 0, [res], [f], stage=stage)
    traj = [x.copy()] if record else None
    restarts = 0
    it = 0
    while it < opts.max_iter:
        if res < opts.tol:
            rep.converged = True
            break
        it += 1
        moved = False
        if opts.newton and res < opts.newton_switch:
            moved, x_new, f_new = _newton_descent_step(prob, x, f, g, opts)
        if not moved:
            d = prob.solve(g)
            slope = float(g @ d)
            eta = opts.step
            slack = 1e-15 * max(1.0, abs(f))
            while eta >= opts.min_step:
                x_new = x - eta * d
                f_new = prob.value(x_new)
                if f_new <= f - opts.armijo * eta * slope + slack:
                    moved = True
                    break
                eta *= 0.5
        if not moved:
            if restarts >= opts.restarts:
                break
            # stalled on a kink: nudge the iterate and keep descending
            restarts += 1
            x = x + 1e-7 * max(1.0, np.abs(x).max()) * rng.standard_normal(x.shape)
            x_new, f_new = x, prob.value(x)
        x, f = x_new, f_new
        g = prob.grad(x)
        res = float(np.linalg.norm(g))
        rep.residual_history.append(res)
        rep.energy_history.append(f)
        if record:
            traj.append(x.copy())
    rep.iterations = it
    rep.wall_time = time.perf_counter() - t0
    rep.details["restarts"] = restarts
    rep.details["shift"] = prob.shift
    return x, rep, traj


def _newton_descent_step(prob, x, f, g, opts):
    try:
        dx = spsolve(prob.hess(x), -g)
    except Exception:   # singular Hessian: fall back to the gradient step
        return False, x, f
    if not np.all(np.isfinite(dx)) or float(g @ dx) >= 0:
        return False, x, f
    res = np.linalg.norm(g)
    eta = 1.0
    for _ in range(8):
        xn = x + eta * dx
        fn = prob.value(xn)
        if fn <= f + 1e-15 * max(1.0, abs(f)) and np.linalg.norm(prob.grad(xn)) < res:
            return True, xn, fn
        eta *= 0.5
    return False, x, f


def newton_critical_point(prob: _Problem, x0, tol: float, max_iter: int = 60):
    """Damped Newton on the residual norm; converges to the nearby critical point of any index."""
    x = np.array(x0, dtype=float)
    g = prob.grad(x)
    res = float(np.linalg.norm(g))
    hist = [res]
    it = 0
    while res >= tol and it < max_iter:
        it += 1
        try:
            dx = spsolve(prob.hess(x), -g)
        except Exception:
            break
        if not np.all(np.isfinite(dx)):
            break
        eta, ok = 1.0, False
        while eta > 1e-6:
            gn = prob.grad(x + eta * dx)
            rn = float(np.linalg.norm(gn))
            if rn < (1 - 1e-4 * eta) * res:
                ok = True
                break
            eta *= 0.5
        if not ok:
            break
        x, g, res = x + eta * dx, gn, rn
        hist.append(res)
    return x, res < tol, hist


def _state(mesh, x) -> SystemState:
    return SystemState.from_flat(mesh, x)


# ------------------------------------------------------------ trapping regions


def check_sub_super(region: TrappingRegion, spec: NonlinearitySpec, opts: SolverOptions,
                    samples: int = 17) -> dict:
    """Node-wise sub/supersolution inequalities; the other component ranges over the region.

    Returns the worst margins; raises PreconditionError on a violation larger
    than ``opts.precondition_tol`` relative to the residual scale.
    """
    mesh = region.mesh
    bn, bw = mesh.boundary_nodes, mesh.boundary_weights
    pts = mesh.node_coords[bn]
    t = np.linspace(0.0, 1.0, samples)[:, None]
    out = {}
    for which, state, sgn in (("sub", region.lower, 1.0), ("super", region.upper, -1.0)):
        for comp in (0, 1):
            u = (state.u1, state.u2)[comp].values
            oc = 1 - comp
            r = apply_p_operator(mesh, spec.p[comp], u, opts.delta, opts.quadrature)
            lo_o = (region.lower.u1, region.lower.u2)[oc].values[bn]
            hi_o = (region.upper.u1, region.upper.u2)[oc].values[bn]
            w = lo_o[None, :] + t * (hi_o - lo_o)[None, :]
            s_self = np.broadcast_to(u[bn], w.shape)
            args = (s_self, w) if comp == 0 else (w, s_self)
            gvals = eval_gradient(spec, pts, *args)[comp]
            flux = bw[None, :] * gvals
            # subsolution: r - flux <= 0 for every admissible w; supersolution: >= 0
            bres = r[bn][None, :] - flux
            worst_b = (bres.max(axis=0) if sgn > 0 else -bres.min(axis=0))
            interior = np.ones(mesh.n_nodes, bool)
            interior[bn] = False
            worst_i = sgn * r[interior]
            scale = 1.0 + np.abs(r).max() + np.abs(flux).max()
            viol = max(worst_b.max(initial=-np.inf), worst_i.max(initial=-np.inf))
            key = f"{which}_u{comp + 1}"
            out[key] = float(viol)
            if viol > opts.precondition_tol * scale:
                if worst_b.size and worst_b.max() >= worst_i.max(initial=-np.inf):
                    j = int(np.argmax(worst_b))
                    node = int(bn[j])
                else:
                    node = int(np.nonzero(interior)[0][np.argmax(worst_i)])
                raise PreconditionError(
                    f"{which}solution inequality fails for component {comp + 1} at node {node}",
                    {"check": key, "node": node, "violation": float(viol), "scale": float(scale)})
    return out


def _region_context(region, spec, opts):
    bn = region.mesh.boundary_nodes
    return EnergyContext(region.mesh, spec,
                         (region.lower.u1.values[bn], region.lower.u2.values[bn]),
                         (region.upper.u1.values[bn], region.upper.u2.values[bn]),
                         TruncationKind.BOX, opts.delta, opts.quadrature)


def solve_in_trapping_region(region: TrappingRegion, spec: NonlinearitySpec,
                             opts: SolverOptions | None = None, init="lower", verify=True):
    """Solution inside an ordered sub/supersolution pair.

    Minimizes the region-truncated energy. From ``init="lower"`` (the
    subsolution) the iteration reaches the minimal solution of the region,
    from ``"upper"`` the maximal one; an explicit SystemState is also accepted.

    Raises
    ------
    PreconditionError
        If the bounds are not a sub/supersolution pair (checked node-wise).
    ConvergenceError
        If the residual does not reach ``opts.tol``.
    """
    opts = opts or SolverOptions()
    t0 = time.perf_counter()
    mesh = region.mesh
    checks = check_sub_super(region, spec, opts) if verify else {}
    lo, hi = region.lower.flat(), region.upper.flat()
    if np.array_equal(lo, hi):
        res = residual_norm(spec, region.lower, delta=opts.delta, quadrature=opts.quadrature)
        rep = SolverReport(True, 0, [res], [], time.perf_counter() - t0, "trapping_region",
                           {"sub_super": checks})
        return region.lower, rep
    if isinstance(init, str):
        x0 = {"lower": lo, "upper": hi}[init]
    else:
        x0 = init.flat() if isinstance(init, SystemState) else np.asarray(init, float)
    ctx = _region_context(region, spec, opts)
    prob = _Problem(ctx)
    x, rep, _ = _minimize(prob, x0, opts, "trapping_region")
    state = _state(mesh, x)
    rep.residual_history.append(residual_norm(spec, state, delta=opts.delta,
                                              quadrature=opts.quadrature))
    rep.details.update({"sub_super": checks, "region_violation": region.violation(state)})
    rep.wall_time = time.perf_counter() - t0
    rep.converged = rep.converged and rep.residual < opts.tol
    if not rep.converged:
        raise ConvergenceError(f"trapping-region solve stopped at residual {rep.residual:.3e}",
                               partial=state, report=rep)
    return state, rep


# ------------------------------------------------------------ extremal solutions


def _eigen_pair(mesh, spec, eigenpairs, opts):
    if eigenpairs is None:
        e1 = first_eigenpair(mesh, spec.p[0])
        e2 = e1 if spec.p[1] == spec.p[0] else first_eigenpair(mesh, spec.p[1])
        return e1, e2
    return eigenpairs


def default_eps0(spec, eigenpairs, level="first") -> float:
    """Half the measured near-zero radius, divided by the largest eigenfunction value."""
    e1, e2 = eigenpairs
    levels = EigenLevels((e1.eigenvalue, e2.eigenvalue), None, (level, level))
    radius = h2_radius(spec, levels)
    top = max(e1.eigenfunction.values.max(), e2.eigenfunction.values.max())
    if not radius > 0:
        raise PreconditionError("no admissible radius near zero: quotient never exceeds the level",
                                {"radius": radius})
    return 0.5 * radius / top


def _extremal(mesh, spec, eigenpairs, opts, sign):
    opts = opts or SolverOptions()
    t0 = time.perf_counter()
    e1, e2 = _eigen_pair(mesh, spec, eigenpairs, opts)
    phi1, phi2 = e1.eigenfunction.values, e2.eigenfunction.values
    n = mesh.n_nodes
    eps = opts.eps0 if opts.eps0 is not None else default_eps0(spec, (e1, e2))
    if sign > 0:
        far = SystemState.from_arrays(mesh, np.full(n, spec.k[0]), np.full(n, spec.k[1]))
    else:
        far = SystemState.from_arrays(mesh, np.full(n, spec.d[0]), np.full(n, spec.d[1]))
    prev = None
    ladder, rungs = [], []
    res_hist, en_hist = [], []
    total_it = 0
    shrinks_for_precondition = 0
    rung = 0
    while rung < opts.ladder_max:
        near = SystemState.from_arrays(mesh, sign * eps * phi1, sign * eps * phi2)
        region = TrappingRegion(near, far) if sign > 0 else TrappingRegion(far, near)
        try:
            state, rep = solve_in_trapping_region(region, spec, opts,
                                                  init="lower" if sign > 0 else "upper")
        except PreconditionError:
            if prev is not None or shrinks_for_precondition >= 30:
                raise
            # starting rung too far from zero: shrink before counting rungs
            shrinks_for_precondition += 1
            eps *= opts.shrink
            continue
        x = state.flat()
        if prev is not None:
            # keep the sequence monotone toward the extremal solution
            x = np.minimum(x, prev) if sign > 0 else np.maximum(x, prev)
            state = _state(mesh, x)
        total_it += rep.iterations
        res_hist.extend(rep.residual_history)
        en_hist.extend(rep.energy_history)
        diff = None
        if prev is not None:
            diff = (w1p_norm(mesh, spec.p[0], x[:n] - prev[:n])
                    + w1p_norm(mesh, spec.p[1], x[n:] - prev[n:]))
        ladder.append({"eps": eps, "iterations": rep.iterations, "residual": rep.residual,
                       "change": diff})
        if diff is not None and diff < opts.ladder_tol:
            res = residual_norm(spec, state, delta=opts.delta, quadrature=opts.quadrature)
            report = SolverReport(res < opts.tol, total_it, res_hist + [res], en_hist,
                                  time.perf_counter() - t0,
                                  "minimal_positive" if sign > 0 else "maximal_negative",
                                  {"ladder": ladder, "eps0": ladder[0]["eps"],
                                   "rungs": np.array(rungs + [x])})
            if not report.converged:
                raise ConvergenceError("extremal solution residual above tolerance",
                                       partial=state, report=report)
            return state, report
        prev = x
        rungs.append(x)
        eps *= opts.shrink
        rung += 1
    report = SolverReport(False, total_it, res_hist, en_hist, time.perf_counter() - t0,
                          "extremal", {"ladder": ladder})
    raise ConvergenceError("epsilon ladder exhausted without stabilizing",
                           partial=_state(mesh, prev), report=report)


def minimal_positive_solution(mesh: Mesh, spec: NonlinearitySpec, eigenpairs=None,
                              opts: SolverOptions | None = None):
    """Smallest positive solution via the shrinking-subsolution ladder.

    Rung n solves in [eps_n u_1, k] starting from its subsolution
    eps_n u_1; rungs are clamped to be node-wise non-increasing and the
    ladder stops once two rungs agree in the discrete W^{1,p} norm.
    """
    return _extremal(mesh, spec, eigenpairs, opts, 1.0)


def maximal_negative_solution(mesh: Mesh, spec: NonlinearitySpec, eigenpairs=None,
                              opts: SolverOptions | None = None):
    """Mirror of :func:`minimal_positive_solution` on [d, -eps u_1]."""
    return _extremal(mesh, spec, eigenpairs, opts, -1.0)


def minimize_energy(ctx: EnergyContext, init: SystemState, opts: SolverOptions | None = None):
    """Local minimizer of the truncated energy reached by descent from ``init``."""
    opts = opts or SolverOptions()
    if init.mesh is not ctx.mesh:
        raise InvalidArgumentError("init lives on a different mesh")
    prob = _Problem(ctx)
    x, rep, _ = _minimize(prob, init.flat(), opts, f"minimize_{ctx.kind.value}")
    state = _state(ctx.mesh, x)
    if not rep.converged:
        raise ConvergenceError(f"energy minimization stopped at residual {rep.residual:.3e}",
                               partial=state, report=rep)
    rep.details["box_violation"] = box_violation(ctx, state)
    return state, rep


_SCALAR = {"u+": (0, TruncationKind.PLUS), "u-": (0, TruncationKind.MINUS),
           "v+": (1, TruncationKind.PLUS), "v-": (1, TruncationKind.MINUS)}


def scalar_extremal(spec: NonlinearitySpec, which: str, bounds: SystemState,
                    opts: SolverOptions | None = None, init=None, eigenpair=None):
    """Constant-sign solution of one component with the other set to zero.

    ``which`` is u+/u- (first component) or v+/v- (second); ``bounds`` is the
    matching extremal system solution. The one-component restriction of the
    plus (minus) truncated energy is minimized from a small multiple of the
    first eigenfunction, which is a subsolution (supersolution) near zero.
    """
    opts = opts or SolverOptions()
    if which not in _SCALAR:
        raise InvalidArgumentError(f"which must be one of {sorted(_SCALAR)}, got {which!r}")
    comp, kind = _SCALAR[which]
    mesh = bounds.mesh
    n = mesh.n_nodes
    ctx = (EnergyContext.from_kind(mesh, spec, kind, positive=bounds, delta=opts.delta,
                                   quadrature=opts.quadrature)
           if kind is TruncationKind.PLUS else
           EnergyContext.from_kind(mesh, spec, kind, negative=bounds, delta=opts.delta,
                                   quadrature=opts.quadrature))
    free = np.arange(n) if comp == 0 else np.arange(n, 2 * n)
    prob = _Problem(ctx, free=free)
    if init is None:
        phi = (eigenpair or first_eigenpair(mesh, spec.p[comp])).eigenfunction.values
        top = (bounds.u1, bounds.u2)[comp].values
        scale = 0.5 * np.abs(top).min() / phi.max()
        init = np.sign(1.0 if kind is TruncationKind.PLUS else -1.0) * scale * phi
    x, rep, _ = _minimize(prob, np.asarray(init, float), opts, f"scalar_{which}")
    if not rep.converged:
        raise ConvergenceError(f"scalar problem {which} stopped at residual {rep.residual:.3e}",
                               partial=FeField(mesh, x), report=rep)
    return FeField(mesh, x), rep


# ------------------------------------------------------------ paths and saddles


@dataclass
class NegativePath:
    states: np.ndarray              # (m, 2N) flat states from the negative to the positive pair
    energies: np.ndarray            # E_0 along the path
    eps: float
    orientation: int                # component carrying the scaled path through zero (0 or 1)
    segments: dict                  # name -> (start, stop) index ranges
    details: dict = field(default_factory=dict)


def _resample(traj, metric, m):
    """m states at equal metric arclength along a recorded trajectory (endpoints kept)."""
    traj = np.asarray(traj)
    if len(traj) < 2:
        return np.repeat(traj[:1], m, axis=0)
    d = np.diff(traj, axis=0)
    seg = np.sqrt(np.maximum(np.einsum("ij,ij->i", d, (metric @ d.T).T), 0.0))
    s = np.concatenate([[0.0], np.cumsum(seg)])
    if s[-1] == 0:
        return np.repeat(traj[:1], m, axis=0)
    target = np.linspace(0.0, s[-1], m)
    idx = np.clip(np.searchsorted(s, target, side="right") - 1, 0, len(traj) - 2)
    frac = np.where(seg[idx] > 0, (target - s[idx]) / np.where(seg[idx] > 0, seg[idx], 1), 0.0)
    out = traj[idx] + np.clip(frac, 0, 1)[:, None] * (traj[idx + 1] - traj[idx])
    out[0], out[-1] = traj[0], traj[-1]
    return out


def gamma1_segment(u_neg, u_pos, s):
    """The explicit scaling path through zero: (1-2s)u_- on [0,1/2], (2s-1)u_+ on [1/2,1]."""
    s = np.asarray(s, dtype=float)
    lo = (1 - 2 * s)[:, None] * np.asarray(u_neg)[None, :]
    hi = (2 * s - 1)[:, None] * np.asarray(u_pos)[None, :]
    return np.where((s <= 0.5)[:, None], lo, hi)


def build_negative_path(mesh: Mesh, spec: NonlinearitySpec, positive: SystemState,
                        negative: SystemState, scalars: dict, sphere_paths: tuple,
                        eigenpairs: tuple, eps: float, m: int = 33,
                        opts: SolverOptions | None = None,
                        max_halvings: int = 20) -> NegativePath:
    """Negative-energy path from the negative to the positive extremal pair.

    Three pieces, oriented so the component whose one-sided energy is lower
    carries the scalar solutions:
      * minus piece: descent of the minus energy from (u_-, -eps u_1) to the
        negative pair, negative parts taken;
      * middle piece: (gamma_1(s), eps * sphere path) with the explicit scaling
        path gamma_1 and a sign-changing boundary-normalized path of the other
        component;
      * plus piece: descent of the plus energy from (u_+, eps u_1) to the
        positive pair, positive parts taken.
    ``eps`` is halved until the maximal E_0 along the path is negative.

    Raises
    ------
    DegenerateInputError
        If no eps down to eps * 2^-max_halvings gives a negative path.
    """
    opts = opts or SolverOptions()
    if m < 3:
        raise InvalidArgumentError("path needs at least 3 states per piece")
    n = mesh.n_nodes
    kw = dict(delta=opts.delta, quadrature=opts.quadrature)
    ctx_p = EnergyContext.from_kind(mesh, spec, "plus", positive=positive, **kw)
    ctx_m = EnergyContext.from_kind(mesh, spec, "minus", negative=negative, **kw)
    ctx_0 = EnergyContext.from_kind(mesh, spec, "zero", positive=positive, negative=negative, **kw)
    z = np.zeros(n)
    u_p, v_p = scalars["u+"].values, scalars["v+"].values
    u_m, v_m = scalars["u-"].values, scalars["v-"].values
    e_up = energy(ctx_p, np.concatenate([u_p, z]))
    e_vp = energy(ctx_p, np.concatenate([z, v_p]))
    e_um = energy(ctx_m, np.concatenate([u_m, z]))
    e_vm = energy(ctx_m, np.concatenate([z, v_m]))
    orient = 0 if e_up <= e_vp else 1
    oc = 1 - orient
    lead_p, lead_m = (u_p, u_m) if orient == 0 else (v_p, v_m)
    phi = eigenpairs[oc].eigenfunction.values
    sphere = np.asarray(sphere_paths[oc].states)

    def pack(lead, other):
        return np.concatenate([lead, other]) if orient == 0 else np.concatenate([other, lead])

    tried = []
    for _ in range(max_halvings + 1):
        tried.append(eps)
        sub = SolverOptions(**{**opts.__dict__, "newton": False})
        prob_p = _Problem(ctx_p)
        _, rep_p, tr_p = _minimize(prob_p, pack(lead_p, eps * phi), sub, "plus_piece", record=True)
        prob_m = _Problem(ctx_m)
        _, rep_m, tr_m = _minimize(prob_m, pack(lead_m, -eps * phi), sub, "minus_piece", record=True)
        tr_p = np.maximum(np.asarray(tr_p), 0.0)
        tr_m = np.minimum(np.asarray(tr_m), 0.0)
        tr_p[-1] = positive.flat()
        tr_m[-1] = negative.flat()
        plus_piece = _resample(tr_p, prob_p.metric, m)
        minus_piece = _resample(tr_m, prob_m.metric, m)[::-1]
        s = np.linspace(0.0, 1.0, len(sphere))
        lead_mid = gamma1_segment(lead_m, lead_p, s)
        mid = np.array([pack(lead_mid[k], eps * sphere[k]) for k in range(len(s))])
        states = np.vstack([minus_piece, mid[1:], plus_piece[1:]])
        energies = np.array([energy(ctx_0, x) for x in states])
        if energies.max() < 0:
            a = len(minus_piece)
            b = a + len(mid) - 1
            return NegativePath(states, energies, eps, orient,
                             {"minus": (0, a), "middle": (a - 1, b), "plus": (b - 1, len(states))},
                             {"eps_tried": tried, "one_sided_energies":
                              {"E+(u+,0)": e_up, "E+(0,v+)": e_vp, "E-(u-,0)": e_um,
                               "E-(0,v-)": e_vm},
                              "piece_iterations": [rep_m.iterations, rep_p.iterations]})
        eps *= 0.5
    raise DegenerateInputError(
        f"path energy stays >= 0 for eps down to {eps * 2:.3e}; try a smaller eps or finer path")


def _strict_local_min(prob, x, rng, radius, k=24):
    f = prob.value(x)
    worst = np.inf
    for _ in range(k):
        v = rng.standard_normal(x.shape)
        v *= radius / np.sqrt(v @ (prob.metric @ v))
        worst = min(worst, prob.value(x + v) - f)
    return worst


def mountain_pass(ctx: EnergyContext, endpoints: tuple, init_path=None,
                  opts: SolverOptions | None = None):
    """Saddle of the energy between two strict local minimizers.

    A climbing-image string relaxes ``init_path`` (flat states, endpoints
    fixed); its top node is then polished by Newton's method on the gradient.
    Returns ``(state, value, report)`` where ``report.details`` holds the final
    path and its energies.

    Raises
    ------
    PreconditionError
        If an endpoint is not a strict local minimizer on a sampled sphere.
    DegenerateGeometryError
        If the saddle search collapses onto an endpoint.
    """
    opts = opts or SolverOptions()
    t0 = time.perf_counter()
    a, b = (e.flat() if isinstance(e, SystemState) else np.asarray(e, float) for e in endpoints)
    mesh = ctx.mesh
    if np.array_equal(a, b):
        val = energy(ctx, a)
        rep = SolverReport(True, 0, [float(np.linalg.norm(energy_subgradient(ctx, a)))], [val],
                           time.perf_counter() - t0, "mountain_pass", {"path": a[None, :],
                                                                       "path_energies": [val]})
        return _state(mesh, a), val, rep
    prob = _Problem(ctx)
    rng = np.random.default_rng(opts.seed)
    radius = 1e-3 * max(np.sqrt(a @ (prob.metric @ a)), np.sqrt(b @ (prob.metric @ b)))
    gaps = [_strict_local_min(prob, a, rng, radius), _strict_local_min(prob, b, rng, radius)]
    if min(gaps) <= 0:
        raise PreconditionError("endpoints must be strict local minimizers",
                                {"sphere_energy_gaps": gaps, "radius": radius})
    if init_path is None:
        t = np.linspace(0.0, 1.0, opts.path_nodes)[:, None]
        init_path = (1 - t) * a + t * b
    path = np.array(init_path, dtype=float)
    path[0], path[-1] = a, b
    if len(path) != opts.path_nodes:
        path = _resample(path, prob.metric, opts.path_nodes)
    sopts = StringOptions(tol=opts.path_tol, max_sweeps=opts.path_max_sweeps,
                          climb_step=opts.climb_step)
    try:
        sres = run_string(path, prob.value, prob.grad, prob.solve, prob.metric, None, sopts)
        string_ok = True
    except ConvergenceError as exc:
        sres = exc.partial
        string_ok = False
    top = int(np.argmax(sres.values[1:-1])) + 1
    x, ok, newton_hist = newton_critical_point(prob, sres.path[top], opts.saddle_tol)
    val = prob.value(x)
    res = float(np.linalg.norm(prob.grad(x)))
    dist = min(np.sqrt((x - a) @ (prob.metric @ (x - a))), np.sqrt((x - b) @ (prob.metric @ (x - b))))
    details = {"path": sres.path, "path_energies": sres.values, "climb_index": top,
               "string_sweeps": sres.sweeps, "string_converged": string_ok,
               "newton_residuals": newton_hist, "endpoint_gaps": gaps,
               "distance_to_endpoints": float(dist)}
    rep = SolverReport(ok, sres.sweeps + len(newton_hist) - 1, sres.max_history + [res],
                       sres.max_history + [val], time.perf_counter() - t0, "mountain_pass", details)
    if dist < 1e-6 * max(1.0, radius * 1e3) or val < max(prob.value(a), prob.value(b)):
        raise DegenerateGeometryError("saddle search slid into an endpoint basin")
    if not ok:
        raise ConvergenceError(f"saddle residual {res:.3e} above {opts.saddle_tol:.1e}",
                               partial=_state(mesh, x), report=rep)
    return _state(mesh, x), val, rep


# ------------------------------------------------------------ full pipeline


class StageError(Exception):
    """Wraps a failure with the name of the pipeline stage it came from."""

    def __init__(self, stage: str, error: Exception):
        super().__init__(f"{stage}: {error}")
        self.stage = stage
        self.error = error


def three_solutions(mesh: Mesh, spec: NonlinearitySpec, opts: SolverOptions | None = None,
                    path_opts: PathOptions | None = None, audit_grid: int = 33,
                    eps: float | None = None) -> ThreeSolutionResult:
    """Positive, negative and third solution with their certificates."""
    opts = opts or SolverOptions()
    path_opts = path_opts or PathOptions(m=opts.path_nodes, seed=opts.seed, delta=opts.delta,
                                         quadrature=opts.quadrature)

    def stage(name, fn, *args, **kw):
        try:
            return fn(*args, **kw)
        except Exception as exc:
            raise StageError(name, exc) from exc

    t0 = time.perf_counter()
    p1, p2 = spec.p
    e1 = stage("eigen", first_eigenpair, mesh, p1)
    e2 = e1 if p2 == p1 else stage("eigen", first_eigenpair, mesh, p2)
    l2_1, sp1 = stage("eigen", second_eigenvalue_minimax, mesh, p1, e1, path_opts)
    if p2 == p1:
        l2_2, sp2 = l2_1, sp1
    else:
        l2_2, sp2 = stage("eigen", second_eigenvalue_minimax, mesh, p2, e2, path_opts)
    levels = EigenLevels((e1.eigenvalue, e2.eigenvalue), (l2_1, l2_2), ("second", "second"))
    audit = check_hypotheses(spec, levels, grid=audit_grid, seed=opts.seed,
                             x_points=mesh.node_coords[mesh.boundary_nodes])
    if audit.verdict != "pass":
        raise StageError("hypotheses", PreconditionError(
            f"hypothesis audit verdict: {audit.verdict}", {"report": audit}))
    pos, rep_pos = stage("minimal_positive", minimal_positive_solution, mesh, spec, (e1, e2), opts)
    neg, rep_neg = stage("maximal_negative", maximal_negative_solution, mesh, spec, (e1, e2), opts)
    scalars, scalar_reps = {}, {}
    for which, bound in (("u+", pos), ("v+", pos), ("u-", neg), ("v-", neg)):
        ep = e1 if which[0] == "u" else e2
        scalars[which], scalar_reps[which] = stage(f"scalar_{which}", scalar_extremal, spec, which,
                                                   bound, opts, eigenpair=ep)
    if eps is None:
        lv = EigenLevels((e1.eigenvalue, e2.eigenvalue), (l2_1, l2_2), ("second", "second"))
        radius = h2_radius(spec, lv)
        top = max(np.abs(sp1.states).max(), np.abs(sp2.states).max())
        eps = 0.5 * radius / top
    ppath = stage("negative_path", build_negative_path, mesh, spec, pos, neg, scalars,
                  (sp1, sp2), (e1, e2), eps, opts.path_nodes, opts)
    kw = dict(delta=opts.delta, quadrature=opts.quadrature)
    ctx0 = EnergyContext.from_kind(mesh, spec, "zero", positive=pos, negative=neg, **kw)
    third, mp_value, rep_mp = stage("mountain_pass", mountain_pass, ctx0, (neg, pos),
                                    ppath.states, opts)
    energies = (energy(ctx0, pos), energy(ctx0, neg), energy(ctx0, third))
    residuals = tuple(residual_norm(spec, s, **kw) for s in (pos, neg, third))
    margins = _ordering_margins(neg, third, pos)
    reports = {"minimal_positive": rep_pos, "maximal_negative": rep_neg,
               **{f"scalar_{k}": v for k, v in scalar_reps.items()}, "mountain_pass": rep_mp}
    eigen = {"lambda1": (e1.eigenvalue, e2.eigenvalue), "lambda2": (l2_1, l2_2),
             "first": (e1, e2), "sphere_paths": (sp1, sp2), "wall_time": time.perf_counter() - t0}
    return ThreeSolutionResult(pos, neg, third, energies, mp_value, residuals, margins, reports,
                               eigen, ppath, rep_mp.details["path"],
                               np.asarray(rep_mp.details["path_energies"]), audit)


def _ordering_margins(neg, mid, pos) -> dict:
    """min(mid - neg) and min(pos - mid) per component; >= 0 means ordered."""
    out = {}
    for i, name in ((0, "u1"), (1, "u2")):
        lo = (neg.u1, neg.u2)[i].values
        m = (mid.u1, mid.u2)[i].values
        hi = (pos.u1, pos.u2)[i].values
        out[name] = {"lower": float((m - lo).min()), "upper": float((hi - m).min())}
    return out
