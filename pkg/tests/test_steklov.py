"""Steklov eigenpairs against closed forms (p = 2) and an ODE shooting oracle (p != 2)."""
import numpy as np
import pytest
from scipy.integrate import solve_ivp

from plapsys.errors import ConvergenceError, DegenerateInputError, InvalidArgumentError
from plapsys.mesh import build_interval_mesh, build_square_mesh, integrate_boundary
from plapsys.steklov import (EigenOptions, PathOptions, first_eigenpair, initial_sphere_path,
                             rayleigh_quotient, second_eigenvalue_minimax)

TANH_HALF = np.tanh(0.5)
COTH_HALF = 1.0 / np.tanh(0.5)


def shooting_eigenvalue(p, odd):
    """Steklov eigenvalue of the 1D p-Laplacian on (0,1) by integrating from the midpoint.

    The flux w = |u'|^{p-2}u' obeys w' = |u|^{p-2}u; even eigenfunctions start
    at (u, w) = (1, 0), odd ones at (0, 1). By symmetry the boundary condition
    at x = 1 gives the eigenvalue w(1) / (|u(1)|^{p-2}u(1)).
    """
    def rhs(_, y):
        u, w = y
        du = np.sign(w) * np.abs(w) ** (1.0 / (p - 1))
        return [du, np.sign(u) * np.abs(u) ** (p - 1)]

    y0 = [0.0, 1.0] if odd else [1.0, 0.0]
    sol = solve_ivp(rhs, (0.5, 1.0), y0, rtol=1e-12, atol=1e-14)
    u, w = sol.y[:, -1]
    return w / (np.sign(u) * abs(u) ** (p - 1))


def test_shooting_oracle_matches_closed_form_at_p2():
    assert shooting_eigenvalue(2.0, False) == pytest.approx(TANH_HALF, rel=1e-10)
    assert shooting_eigenvalue(2.0, True) == pytest.approx(COTH_HALF, rel=1e-10)


class TestRayleigh:
    def test_constant(self):
        assert rayleigh_quotient(build_interval_mesh(10), 2.0, np.ones(11)) == pytest.approx(0.5)

    def test_linear(self):
        m = build_interval_mesh(200)
        assert rayleigh_quotient(m, 2.0, m.node_coords[:, 0]) == pytest.approx(4 / 3, abs=1e-3)

    def test_scale_invariant(self, rng):
        m = build_square_mesh(4)
        u = rng.standard_normal(m.n_nodes)
        assert rayleigh_quotient(m, 3.0, 3 * u) == pytest.approx(rayleigh_quotient(m, 3.0, u), rel=1e-12)

    def test_zero_trace_rejected(self):
        m = build_interval_mesh(4)
        with pytest.raises(DegenerateInputError):
            rayleigh_quotient(m, 2.0, np.array([0.0, 1.0, 1.0, 1.0, 0.0]))


class TestFirstEigenpair:
    def test_closed_form(self, eig200):
        first, _, _ = eig200
        assert first.eigenvalue == pytest.approx(TANH_HALF, abs=1e-3)
        assert first.converged

    def test_cosh_shape(self, eig200, interval200):
        u = eig200[0].eigenfunction.values
        assert u.max() / u.min() == pytest.approx(np.cosh(0.5), abs=1e-2)
        x = interval200.node_coords[:, 0]
        shape = np.cosh(x - 0.5)
        np.testing.assert_allclose(u / u[0], shape / shape[0], atol=1e-3)

    def test_normalized_positive_consistent(self, eig200, interval200):
        first = eig200[0]
        u = first.eigenfunction.values
        assert np.all(u > 0)
        assert integrate_boundary(interval200, u[interval200.boundary_nodes], 2.0) == pytest.approx(1.0, abs=1e-10)
        assert rayleigh_quotient(interval200, 2.0, u) == pytest.approx(first.eigenvalue, rel=1e-12)

    @pytest.mark.parametrize("p", [1.5, 3.0])
    def test_shooting_oracle(self, p):
        m = build_interval_mesh(200)
        first = first_eigenpair(m, p)
        assert first.eigenvalue == pytest.approx(shooting_eigenvalue(p, False), abs=2e-3)
        assert np.all(first.eigenfunction.values > 0)

    def test_refinement_approaches_closed_form(self):
        errs = [abs(first_eigenpair(build_interval_mesh(n), 2.0).eigenvalue - TANH_HALF)
                for n in (25, 50, 100)]
        assert errs[0] > errs[1] > errs[2]

    def test_variational_lower_bound(self, eig200, interval200, rng):
        lam = eig200[0].eigenvalue
        x = interval200.node_coords[:, 0]
        for _ in range(200):
            c = rng.standard_normal(4)
            u = c[0] + c[1] * x + c[2] * np.cos(np.pi * x) + c[3] * rng.standard_normal(x.size) * 0.1
            assert rayleigh_quotient(interval200, 2.0, u) >= lam - 1e-12

    def test_square_mesh_positive(self):
        first = first_eigenpair(build_square_mesh(6), 2.0)
        assert np.all(first.eigenfunction.values > 0)
        assert 0 < first.eigenvalue < rayleigh_quotient(build_square_mesh(6), 2.0, np.ones(49))

    def test_deterministic(self):
        m = build_interval_mesh(40)
        assert first_eigenpair(m, 3.0).eigenvalue == first_eigenpair(m, 3.0).eigenvalue

    def test_iteration_budget(self):
        with pytest.raises(ConvergenceError) as info:
            first_eigenpair(build_interval_mesh(50), 3.0, EigenOptions(max_iter=2))
        assert info.value.partial.eigenvalue > 0

    def test_bad_exponent(self):
        with pytest.raises(InvalidArgumentError):
            first_eigenpair(build_interval_mesh(5), 1.0)


class TestSecondEigenvalue:
    def test_closed_form(self, eig200):
        first, lam2, path = eig200
        assert lam2 == pytest.approx(COTH_HALF, abs=5e-3)
        assert lam2 > first.eigenvalue

    def test_path_structure(self, eig200, interval200):
        first, lam2, path = eig200
        bn = interval200.boundary_nodes
        assert path.states.shape == (33, interval200.n_nodes)
        np.testing.assert_array_equal(path.states[0], -first.eigenfunction.values)
        np.testing.assert_array_equal(path.states[-1], first.eigenfunction.values)
        norms = [integrate_boundary(interval200, s[bn], 2.0) for s in path.states]
        np.testing.assert_allclose(norms, 1.0, atol=1e-8)
        top = path.states[path.max_index][bn]
        assert top.min() < 0 < top.max()

    def test_initial_path_bounds_result(self, eig200, interval200):
        first, lam2, _ = eig200
        init = initial_sphere_path(interval200, first, 33)
        assert max(rayleigh_quotient(interval200, 2.0, s) for s in init) >= lam2

    @pytest.mark.parametrize("p", [1.5, 3.0])
    def test_shooting_oracle(self, p):
        m = build_interval_mesh(100)
        first = first_eigenpair(m, p)
        lam2, _ = second_eigenvalue_minimax(m, p, first)
        assert lam2 == pytest.approx(shooting_eigenvalue(p, True), rel=5e-3)

    def test_matches_discrete_boundary_schur_complement(self):
        """At p = 2 the discrete second eigenvalue is a 2x2 generalized eigenproblem."""
        from plapsys.mesh import linear_operator_matrix
        m = build_interval_mesh(50)
        first = first_eigenpair(m, 2.0)
        lam2, _ = second_eigenvalue_minimax(m, 2.0, first)
        P = linear_operator_matrix(m).toarray()
        b = m.boundary_nodes
        i = np.setdiff1d(np.arange(m.n_nodes), b)
        S = P[np.ix_(b, b)] - P[np.ix_(b, i)] @ np.linalg.solve(P[np.ix_(i, i)], P[np.ix_(i, b)])
        exact = np.sort(np.linalg.eigvalsh(S / m.boundary_weights[:, None]))
        assert first.eigenvalue == pytest.approx(exact[0], rel=1e-9)
        assert lam2 == pytest.approx(exact[1], rel=1e-8)

    def test_wrong_exponent_rejected(self, eig200, interval200):
        with pytest.raises(InvalidArgumentError):
            second_eigenvalue_minimax(interval200, 3.0, eig200[0])

    def test_short_path_rejected(self, eig200, interval200):
        with pytest.raises(InvalidArgumentError):
            second_eigenvalue_minimax(interval200, 2.0, eig200[0], PathOptions(m=2))
