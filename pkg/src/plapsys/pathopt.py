"""Climbing-image string method shared by the lambda_2 minimax and the mountain pass.

Nodes descend along a preconditioned gradient, the current maximum node climbs
along the path tangent, and the path is re-spaced by energy-weighted arclength
in the preconditioner metric after every sweep.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, NumericalDegeneracyError


@dataclass
class StringOptions:
    tol: float = 1e-10
    max_sweeps: int = 20000
    window: int = 5
    step: float = 1.0
    climb_step: float = 0.5
    climb: bool = True
    energy_weight: float = 1.0
    armijo: float = 1e-4
    min_step: float = 1e-12


@dataclass
class StringResult:
    path: np.ndarray
    values: np.ndarray
    climb_index: int
    sweeps: int
    converged: bool
    max_history: list = field(default_factory=list)
    wall_time: float = 0.0


def _armijo(x, fx, g, d, value, retract, step, c, min_step):
    slope = float(g @ d)
    if slope <= 0:
        return x, fx
    eta = step
    # relative slack absorbs rounding once the decrease is below machine precision
    slack = 1e-15 * max(1.0, abs(fx))
    while eta >= min_step:
        cand = retract(x - eta * d)
        fc = value(cand)
        if fc <= fx - c * eta * slope + slack:
            return cand, fc
        eta *= 0.5
    return x, fx


def _cross(g, d, tau, metric):
    """Component of the preconditioned step ``d`` orthogonal to ``tau`` in the metric."""
    tn = float(tau @ (metric @ tau))
    return d - float(g @ tau) / tn * tau if tn > 0 else d


def _climb_step(x, fx, g, d, tau, value, grad, solve, metric, retract, opts):
    """Descend across the path, then maximize along it with a 1D Newton step.

    Both moves are safeguarded: the cross-path step by Armijo, the tangent
    step by halving until the value does not drop. The tangent curvature is a
    central difference of the gradient. Where it is not negative the tangent
    step is skipped, since there is no bracketed maximum to move toward.
    """
    tn = float(tau @ (metric @ tau))
    if tn <= 0:
        return x, fx
    x, fx = _armijo(x, fx, g, _cross(g, d, tau, metric), value, retract, opts.climb_step, opts.armijo, opts.min_step)
    g = grad(x)
    slope = float(g @ tau) / tn
    h = 1e-5 * np.sqrt(max(float(x @ (metric @ x)), 1e-300) / tn)
    curv = float((grad(x + h * tau) - grad(x - h * tau)) @ tau) / (2.0 * h * tn)
    if curv >= 0:
        # no local maximum along the tangent; climbing here runs up valley walls
        return x, fx
    # keep the climber inside its bracket of neighbours
    along = float(np.clip(-slope / curv, -0.25, 0.25))
    slack = 1e-15 * max(1.0, abs(fx))
    for _ in range(30):
        cand = retract(x + along * tau)
        fc = value(cand)
        if fc >= fx - slack:
            return cand, fc
        along *= 0.5
    return x, fx


def _respace(path, values, metric, weight, retract):
    """Redistribute nodes at equal energy-weighted arclength, endpoints fixed."""
    m = path.shape[0]
    if m <= 2:
        return path
    diffs = np.diff(path, axis=0)
    seg = np.sqrt(np.maximum(np.einsum("ij,ij->i", diffs, (metric @ diffs.T).T), 0.0))
    total = seg.sum()
    if total <= 0 or np.any(seg <= 1e-14 * total):
        raise NumericalDegeneracyError("string collapsed: adjacent states coincide")
    if weight > 0:
        mid = 0.5 * (values[1:] + values[:-1])
        span = values.max() - values.min()
        w = 1.0 + weight * ((mid - values.min()) / span if span > 0 else 0.0)
        seg = seg * w
    s = np.concatenate([[0.0], np.cumsum(seg)])
    s /= s[-1]
    target = np.linspace(0.0, 1.0, m)
    out = np.empty_like(path)
    out[0], out[-1] = path[0], path[-1]
    idx = np.clip(np.searchsorted(s, target[1:-1], side="right") - 1, 0, m - 2)
    frac = (target[1:-1] - s[idx]) / (s[idx + 1] - s[idx])
    out[1:-1] = path[idx] + frac[:, None] * (path[idx + 1] - path[idx])
    for k in range(1, m - 1):
        out[k] = retract(out[k])
    return out


def run_string(path, value, grad, solve, metric, retract=None, opts=None):
    """Relax ``path`` (shape (m, n), endpoints fixed) toward a minimum-energy path.

    ``solve(g)`` applies the inverse preconditioner, ``metric`` is the
    preconditioner matrix used for tangents and arclength, ``retract`` maps a
    trial point back to the admissible set (identity by default).
    """
    opts = opts or StringOptions()
    retract = retract or (lambda x: x)
    t0 = time.perf_counter()
    path = np.array(path, dtype=float)
    m = path.shape[0]
    values = np.array([value(x) for x in path])
    history = [float(values.max())]
    small = 0
    climb = -1
    for sweep in range(1, opts.max_sweeps + 1):
        climb = int(np.argmax(values[1:-1])) + 1 if (opts.climb and m > 2) else -1
        for k in range(1, m - 1):
            g = grad(path[k])
            d = solve(g)
            if k == climb:
                path[k], values[k] = _climb_step(path[k], values[k], g, d,
                                                 path[k + 1] - path[k - 1], value, grad,
                                                 solve, metric, retract, opts)
            else:
                path[k], values[k] = _armijo(path[k], values[k], g, d, value, retract,
                                             opts.step, opts.armijo, opts.min_step)
        if climb > 0:
            left = _respace(path[: climb + 1], values[: climb + 1], metric, opts.energy_weight, retract)
            right = _respace(path[climb:], values[climb:], metric, opts.energy_weight, retract)
            path = np.vstack([left, right[1:]])
        else:
            path = _respace(path, values, metric, opts.energy_weight, retract)
        values = np.array([value(x) for x in path])
        history.append(float(values.max()))
        small = small + 1 if abs(history[-1] - history[-2]) < opts.tol * max(1.0, abs(history[-1])) else 0
        if small >= opts.window:
            return StringResult(path, values, int(np.argmax(values)), sweep, True, history,
                                time.perf_counter() - t0)
    result = StringResult(path, values, int(np.argmax(values)), opts.max_sweeps, False, history,
                          time.perf_counter() - t0)
    raise ConvergenceError("string method did not converge", partial=result)
