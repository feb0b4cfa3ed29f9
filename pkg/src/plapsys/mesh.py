"""Piecewise-linear meshes of (0,1) and (0,1)^2 with quadrature and p-Laplacian assembly.

All integrals of |u|^p use either vertex (lumped) quadrature, the default, or a
per-element Gauss rule that is exact for quadratics. The gradient term is exact
per element because P1 gradients are element-constant.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import sparse

from .errors import InvalidArgumentError

QUADRATURES = ("vertex", "gauss")
DEFAULT_DELTA = 1e-10


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable simplicial mesh.

    ``boundary_facets`` is stored as four parallel arrays: facet node indices,
    facet measures, outward unit normals and the owning element index.
    """

    dimension: int
    node_coords: np.ndarray
    elements: np.ndarray
    element_measures: np.ndarray
    facet_nodes: np.ndarray
    facet_measures: np.ndarray
    facet_normals: np.ndarray
    facet_elements: np.ndarray
    boundary_node_flags: np.ndarray

    def __post_init__(self):
        for arr in (self.node_coords, self.elements, self.element_measures, self.facet_nodes,
                    self.facet_measures, self.facet_normals, self.facet_elements,
                    self.boundary_node_flags):
            arr.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return self.node_coords.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def boundary_facets(self):
        return list(zip(map(tuple, self.facet_nodes), self.facet_measures, self.facet_normals))

    @cached_property
    def boundary_nodes(self) -> np.ndarray:
        """Indices of boundary nodes in increasing order."""
        idx = np.flatnonzero(self.boundary_node_flags)
        idx.setflags(write=False)
        return idx

    @cached_property
    def boundary_weights(self) -> np.ndarray:
        """Boundary vertex-quadrature weights aligned with :attr:`boundary_nodes`.

        In 1D the boundary is two points with unit (counting) weight; in 2D each
        boundary node gets half the length of each adjacent boundary edge.
        """
        w = np.zeros(self.n_nodes)
        if self.dimension == 1:
            w[self.facet_nodes[:, 0]] += self.facet_measures
        else:
            for k in range(self.facet_nodes.shape[1]):
                np.add.at(w, self.facet_nodes[:, k], self.facet_measures / self.facet_nodes.shape[1])
        out = w[self.boundary_nodes]
        out.setflags(write=False)
        return out

    @cached_property
    def vertex_weights(self) -> np.ndarray:
        w = np.zeros(self.n_nodes)
        share = self.element_measures / (self.dimension + 1)
        for k in range(self.dimension + 1):
            np.add.at(w, self.elements[:, k], share)
        w.setflags(write=False)
        return w

    @cached_property
    def gradient_matrix(self) -> sparse.csr_matrix:
        """Sparse map from nodal values to element gradients, shape (E*dim, N).

        Row ``e*dim + c`` holds the c-th gradient component on element e.
        """
        d = self.dimension
        pts = self.node_coords[self.elements]  # (E, d+1, d)
        jac = pts[:, 1:, :] - pts[:, :1, :]  # (E, d, d): rows are edge vectors
        inv = np.linalg.inv(jac)  # columns give reference-gradient map
        ref = np.vstack([-np.ones((1, d)), np.eye(d)])  # (d+1, d) barycentric gradients
        # grad(lambda_k) = inv @ ref[k]
        grads = np.einsum("eij,kj->eki", inv, ref)  # (E, d+1, d)
        rows = (np.arange(self.n_elements)[:, None, None] * d + np.arange(d)[None, None, :])
        rows = np.broadcast_to(rows, grads.shape)
        cols = np.broadcast_to(self.elements[:, :, None], grads.shape)
        return sparse.csr_matrix((grads.ravel(), (rows.ravel(), cols.ravel())),
                                 shape=(self.n_elements * d, self.n_nodes))

    @cached_property
    def _gauss_rule(self):
        d = self.dimension
        if d == 1:
            a = 0.5 - 0.5 / np.sqrt(3.0)
            bary = np.array([[1 - a, a], [a, 1 - a]])
            wref = np.array([0.5, 0.5])
        else:
            bary = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])
            wref = np.full(3, 1.0 / 3.0)
        nq = bary.shape[0]
        rows = np.arange(self.n_elements * nq).reshape(self.n_elements, nq)
        rows = np.broadcast_to(rows[:, :, None], (self.n_elements, nq, d + 1))
        cols = np.broadcast_to(self.elements[:, None, :], rows.shape)
        vals = np.broadcast_to(bary[None], rows.shape)
        interp = sparse.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())),
                                   shape=(self.n_elements * nq, self.n_nodes))
        weights = (self.element_measures[:, None] * wref[None, :]).ravel()
        return interp, weights

    def quadrature(self, kind: str = "vertex"):
        """Return ``(interp, weights)``; ``interp`` is None for vertex quadrature."""
        if kind == "vertex":
            return None, self.vertex_weights
        if kind == "gauss":
            return self._gauss_rule
        raise InvalidArgumentError(f"unknown quadrature {kind!r}; expected one of {QUADRATURES}")


@dataclass(frozen=True, eq=False)
class FeField:
    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (self.mesh.n_nodes,):
            raise InvalidArgumentError(
                f"field has {vals.shape} values, mesh has {self.mesh.n_nodes} nodes")
        object.__setattr__(self, "values", vals)

    @property
    def trace(self) -> np.ndarray:
        return self.values[self.mesh.boundary_nodes]


@dataclass(frozen=True, eq=False)
class SystemState:
    u1: FeField
    u2: FeField

    def __post_init__(self):
        if self.u1.mesh is not self.u2.mesh:
            raise InvalidArgumentError("both components of a SystemState must share one mesh")

    @property
    def mesh(self) -> Mesh:
        return self.u1.mesh

    @classmethod
    def from_arrays(cls, mesh: Mesh, u1, u2) -> "SystemState":
        return cls(FeField(mesh, u1), FeField(mesh, u2))

    @classmethod
    def from_flat(cls, mesh: Mesh, x) -> "SystemState":
        n = mesh.n_nodes
        return cls.from_arrays(mesh, x[:n], x[n:])

    def flat(self) -> np.ndarray:
        return np.concatenate([self.u1.values, self.u2.values])


def build_interval_mesh(n: int) -> Mesh:
    """Uniform mesh of (0,1) with ``n`` elements."""
    if int(n) != n or n < 2:
        raise InvalidArgumentError(f"interval mesh needs n >= 2 elements, got {n}")
    n = int(n)
    x = np.linspace(0.0, 1.0, n + 1)
    elements = np.column_stack([np.arange(n), np.arange(1, n + 1)])
    flags = np.zeros(n + 1, dtype=bool)
    flags[[0, n]] = True
    return Mesh(
        dimension=1,
        node_coords=x[:, None],
        elements=elements,
        element_measures=np.diff(x),
        facet_nodes=np.array([[0], [n]]),
        facet_measures=np.ones(2),
        facet_normals=np.array([[-1.0], [1.0]]),
        facet_elements=np.array([0, n - 1]),
        boundary_node_flags=flags,
    )


def build_square_mesh(n: int) -> Mesh:
    """Structured triangulation of (0,1)^2 with 2n^2 right triangles."""
    if int(n) != n or n < 2:
        raise InvalidArgumentError(f"square mesh needs n >= 2 cells per side, got {n}")
    n = int(n)
    t = np.linspace(0.0, 1.0, n + 1)
    xx, yy = np.meshgrid(t, t, indexing="xy")
    coords = np.column_stack([xx.ravel(), yy.ravel()])

    def nid(i, j):
        return i + j * (n + 1)

    tris = []
    for j in range(n):
        for i in range(n):
            a, b, c, d = nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1)
            tris.append((a, b, c))
            tris.append((a, c, d))
    elements = np.array(tris)
    measures = np.full(len(tris), 0.5 / n**2)

    facets, normals, owners = [], [], []
    for i in range(n):
        # bottom edge (y=0) belongs to triangle (a,b,c) of cell (i,0)
        facets.append((nid(i, 0), nid(i + 1, 0)))
        normals.append((0.0, -1.0))
        owners.append(2 * (i + 0 * n))
        # top edge (y=1) belongs to triangle (a,c,d) of cell (i,n-1)
        facets.append((nid(i, n), nid(i + 1, n)))
        normals.append((0.0, 1.0))
        owners.append(2 * (i + (n - 1) * n) + 1)
        # left edge (x=0) belongs to triangle (a,c,d) of cell (0,i)
        facets.append((nid(0, i), nid(0, i + 1)))
        normals.append((-1.0, 0.0))
        owners.append(2 * (0 + i * n) + 1)
        # right edge (x=1) belongs to triangle (a,b,c) of cell (n-1,i)
        facets.append((nid(n, i), nid(n, i + 1)))
        normals.append((1.0, 0.0))
        owners.append(2 * ((n - 1) + i * n))
    facets = np.array(facets)
    flags = np.zeros(coords.shape[0], dtype=bool)
    flags[facets.ravel()] = True
    return Mesh(
        dimension=2,
        node_coords=coords,
        elements=elements,
        element_measures=measures,
        facet_nodes=facets,
        facet_measures=np.full(len(facets), 1.0 / n),
        facet_normals=np.array(normals),
        facet_elements=np.array(owners),
        boundary_node_flags=flags,
    )


def build_mesh(kind: str, n: int) -> Mesh:
    if kind == "interval":
        return build_interval_mesh(n)
    if kind == "square":
        return build_square_mesh(n)
    raise InvalidArgumentError(f"unknown mesh kind {kind!r}")


def nodal_values(mesh: Mesh, f) -> np.ndarray:
    """Values of ``f`` (FeField or array) after checking it lives on ``mesh``."""
    if isinstance(f, FeField):
        if f.mesh is not mesh:
            raise InvalidArgumentError("field belongs to a different mesh")
        return f.values
    vals = np.asarray(f, dtype=float)
    if vals.shape != (mesh.n_nodes,):
        raise InvalidArgumentError(
            f"expected {mesh.n_nodes} nodal values, got shape {vals.shape}")
    return vals


def _check_p(p, lower=1.0, strict=False):
    if not np.isfinite(p) or p < lower or (strict and p == lower):
        rel = ">" if strict else ">="
        raise InvalidArgumentError(f"exponent p must be {rel} {lower}, got {p}")


def _check_delta(p, delta):
    if delta < 0:
        raise InvalidArgumentError(f"regularization delta must be >= 0, got {delta}")
    if delta == 0 and p < 2:
        raise InvalidArgumentError("delta = 0 is only permitted for p >= 2")


def signed_power(u, e):
    """sign(u)|u|^e; with e = p-1 this is |u|^{p-2}u."""
    return np.sign(u) * np.abs(u) ** e


def integrate_interior(mesh: Mesh, f, p: float, quadrature: str = "vertex") -> float:
    """Quadrature of |u|^p over the domain."""
    _check_p(p)
    u = nodal_values(mesh, f)
    interp, w = mesh.quadrature(quadrature)
    uq = u if interp is None else interp @ u
    return float(w @ np.abs(uq) ** p)


def integrate_boundary(mesh: Mesh, trace_values, p: float) -> float:
    """Boundary quadrature of |u|^p from values at :attr:`Mesh.boundary_nodes`."""
    _check_p(p)
    t = np.asarray(trace_values, dtype=float)
    if t.shape != mesh.boundary_weights.shape:
        raise InvalidArgumentError(
            f"trace has shape {t.shape}, mesh has {mesh.boundary_weights.size} boundary nodes")
    return float(mesh.boundary_weights @ np.abs(t) ** p)


def _element_gradients(mesh: Mesh, u):
    return (mesh.gradient_matrix @ u).reshape(mesh.n_elements, mesh.dimension)


def p_energy(mesh: Mesh, p: float, u, delta: float = DEFAULT_DELTA,
             quadrature: str = "vertex") -> float:
    """(1/p) * (||grad u||_p^p + ||u||_p^p) with the regularized gradient term.

    The gradient density is ``(|grad u|^2 + delta^2)^(p/2) - delta^p`` so that the
    zero field has zero energy and the derivative is exactly
    :func:`apply_p_operator`.
    """
    _check_p(p, strict=True)
    _check_delta(p, delta)
    u = nodal_values(mesh, u)
    gr = _element_gradients(mesh, u)
    s = np.einsum("ij,ij->i", gr, gr)
    grad_term = mesh.element_measures @ ((s + delta**2) ** (p / 2) - delta**p)
    return float((grad_term + integrate_interior(mesh, u, p, quadrature)) / p)


def apply_p_operator(mesh: Mesh, p: float, u, delta: float = DEFAULT_DELTA,
                     quadrature: str = "vertex") -> np.ndarray:
    """Covector r_j = int a(|grad u|) grad u . grad phi_j + int |u|^{p-2} u phi_j.

    ``a(s) = (s^2 + delta^2)^((p-2)/2)`` regularizes the flux for p < 2.
    """
    _check_p(p, strict=True)
    _check_delta(p, delta)
    u = nodal_values(mesh, u)
    gr = _element_gradients(mesh, u)
    s = np.einsum("ij,ij->i", gr, gr)
    a = (s + delta**2) ** ((p - 2) / 2) if p != 2 else np.ones_like(s)
    flux = (mesh.element_measures * a)[:, None] * gr
    r = mesh.gradient_matrix.T @ flux.ravel()
    interp, w = mesh.quadrature(quadrature)
    if interp is None:
        r = r + w * signed_power(u, p - 1)
    else:
        r = r + interp.T @ (w * signed_power(interp @ u, p - 1))
    return r


def p_hessian(mesh: Mesh, p: float, u, delta: float = DEFAULT_DELTA,
              quadrature: str = "vertex") -> sparse.csr_matrix:
    """Jacobian of :func:`apply_p_operator` (symmetric positive semidefinite)."""
    u = nodal_values(mesh, u)
    d = mesh.dimension
    gr = _element_gradients(mesh, u)
    s = np.einsum("ij,ij->i", gr, gr) + delta**2
    if p == 2:
        blocks = np.broadcast_to(np.eye(d), (mesh.n_elements, d, d)).copy()
    else:
        s = np.maximum(s, 1e-300)
        a = s ** ((p - 2) / 2)
        b = (p - 2) * s ** ((p - 4) / 2)
        blocks = a[:, None, None] * np.eye(d)[None] + b[:, None, None] * gr[:, :, None] * gr[:, None, :]
    blocks *= mesh.element_measures[:, None, None]
    e = np.arange(mesh.n_elements)
    rows = np.broadcast_to((e[:, None, None] * d + np.arange(d)[None, :, None]), blocks.shape)
    cols = np.broadcast_to((e[:, None, None] * d + np.arange(d)[None, None, :]), blocks.shape)
    dblk = sparse.csr_matrix((blocks.ravel(), (rows.ravel(), cols.ravel())),
                             shape=(mesh.n_elements * d,) * 2)
    G = mesh.gradient_matrix
    H = G.T @ dblk @ G
    interp, w = mesh.quadrature(quadrature)
    uq = u if interp is None else interp @ u
    with np.errstate(divide="ignore"):
        m = w * (p - 1) * (np.abs(uq) ** (p - 2) if p != 2 else np.ones_like(uq))
    m = np.where(np.isfinite(m), m, 0.0)
    if interp is None:
        H = H + sparse.diags(m)
    else:
        H = H + interp.T @ sparse.diags(m) @ interp
    return sparse.csr_matrix(H)


def linear_operator_matrix(mesh: Mesh, quadrature: str = "vertex") -> sparse.csc_matrix:
    """Stiffness plus mass matrix of the p = 2 operator (the H^1 Gram matrix)."""
    return sparse.csc_matrix(p_hessian(mesh, 2.0, np.zeros(mesh.n_nodes), 0.0, quadrature))


def boundary_mass_matrix(mesh: Mesh) -> sparse.csc_matrix:
    w = np.zeros(mesh.n_nodes)
    w[mesh.boundary_nodes] = mesh.boundary_weights
    return sparse.csc_matrix(sparse.diags(w))
