"""Climbing-image string on a curved double well with minima (+-1, 0) and saddle (0, 1/2).

The preconditioner is the constant metric 8 I, a bound on the Hessian norm
along the path, which plays the role the H^1 metric plays for the PDE energies.
"""
import numpy as np
import pytest
from scipy.integrate import solve_ivp

from plapsys.errors import ConvergenceError, NumericalDegeneracyError
from plapsys.pathopt import StringOptions, run_string


def value(z):
    x, y = z
    return (x * x - 1) ** 2 + 2 * (y - 0.5 * (1 - x * x)) ** 2


def grad(z):
    x, y = z
    r = y - 0.5 * (1 - x * x)
    return np.array([4 * x * (x * x - 1) + 4 * r * x, 4 * r])


L = 8.0
METRIC = L * np.eye(2)


def solve(g):
    return g / L


def steepest_descent_curve():
    """Minimum-energy path oracle: unit-speed steepest descent out of the saddle along +-x."""
    def rhs(t, z):
        g = grad(z)
        return -g / max(np.linalg.norm(g), 1e-12)

    def at_minimum(t, z):
        return np.linalg.norm(grad(z)) - 1e-9
    at_minimum.terminal = True
    halves = [solve_ivp(rhs, (0, 5), [s * 1e-7, 0.5], rtol=1e-11, atol=1e-12, max_step=1e-3,
                        events=at_minimum).y.T for s in (-1, 1)]
    return np.vstack([halves[0][::-1], halves[1]])


def straight_path(m=17):
    t = np.linspace(0, 1, m)[:, None]
    return (1 - t) * np.array([-1.0, 0.0]) + t * np.array([1.0, 0.0])


def test_finds_saddle_on_curved_path():
    # the stop rule watches the maximum value, which pins the location only to sqrt(tol)
    res = run_string(straight_path(), value, grad, solve, METRIC, opts=StringOptions(tol=1e-14))
    assert res.converged
    top = res.path[res.climb_index]
    np.testing.assert_allclose(top, [0.0, 0.5], atol=1e-6)
    assert res.values.max() == pytest.approx(1.0, abs=1e-10)


def test_nodes_approach_minimum_energy_path_under_refinement():
    curve = steepest_descent_curve()
    dist = []
    for m in (17, 33):
        res = run_string(straight_path(m), value, grad, solve, METRIC)
        dist.append(max(np.linalg.norm(curve - z, axis=1).min() for z in res.path))
    assert dist[0] < 0.03
    assert dist[1] < 0.6 * dist[0]


def test_max_history_starts_at_initial_maximum():
    res = run_string(straight_path(), value, grad, solve, METRIC)
    assert res.max_history[0] == pytest.approx(1.5)
    assert res.max_history[-1] < res.max_history[0]


def test_endpoints_fixed():
    init = straight_path()
    res = run_string(init, value, grad, solve, METRIC)
    np.testing.assert_array_equal(res.path[0], init[0])
    np.testing.assert_array_equal(res.path[-1], init[-1])


def test_retraction_applied():
    # keep every state on the unit circle shifted down; the constraint is y <= 0.2
    retract = lambda z: np.array([z[0], min(z[1], 0.2)])
    res = run_string(straight_path(), value, grad, solve, METRIC, retract)
    assert np.all(res.path[:, 1] <= 0.2 + 1e-15)


def test_budget_exhausted():
    with pytest.raises(ConvergenceError) as info:
        run_string(straight_path(), value, grad, solve, METRIC, opts=StringOptions(max_sweeps=2))
    assert info.value.partial.sweeps == 2 and not info.value.partial.converged


def test_collapsed_path_detected():
    path = np.repeat(np.array([[0.0, 0.0]]), 5, axis=0)
    with pytest.raises(NumericalDegeneracyError):
        run_string(path, value, grad, solve, METRIC)
