"""Boundary nonlinearities (g1, g2) = grad g, the worked example family, and a
sampling auditor for the structural hypotheses the solvers rely on."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InvalidArgumentError, NumericOverflowError
from .expr import Expression

# tolerances of the sampled audit
LIMIT_MARGIN = 1e-3
GRID_SLACK = 1e-12
LADDER_MIN = 1e-8


@dataclass(frozen=True)
class NonlinearitySpec:
    """Potential g(x, s1, s2) with its gradient, Hessian and box constants.

    The callables take ``x`` (boundary coordinates, last axis = dimension, or
    None for fields that ignore x) and broadcastable ``s1``, ``s2``.
    ``hessian`` returns (g11, g12, g22).
    """

    potential: Callable
    gradient: Callable
    hessian: Callable
    k: tuple = (1.0, 1.0)
    d: tuple = (-1.0, -1.0)
    p: tuple = (2.0, 2.0)
    constants: dict = field(default_factory=dict)
    label: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        k1, k2 = self.k
        d1, d2 = self.d
        if not (k1 > 0 and k2 > 0 and d1 < 0 and d2 < 0):
            raise InvalidArgumentError(f"box constants need d < 0 < k, got k={self.k}, d={self.d}")
        if min(self.p) <= 1:
            raise InvalidArgumentError(f"exponents must exceed 1, got {self.p}")


@dataclass(frozen=True)
class ExampleParams:
    alpha: float = 2.0
    beta: float = 1.0
    gamma: float = 1.5
    p1: float = 2.0
    p2: float = 2.0
    q1: float = 1.0
    q2: float = 1.0

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            if not getattr(self, name) > 0:
                raise InvalidArgumentError(f"{name} must be positive, got {getattr(self, name)}")
        if self.p1 < 2 or self.p2 < 2:
            raise InvalidArgumentError(f"example exponents must be >= 2, got {self.p1}, {self.p2}")
        if not (self.q1 > 0 and self.q2 > 0):
            raise InvalidArgumentError(f"q1, q2 must be positive, got {self.q1}, {self.q2}")

    def h1_alpha_threshold(self, k=(1.0, 1.0)) -> tuple:
        """Smallest alpha passing each of the two upper box-face inequalities."""
        k1, k2 = k
        a = (self.beta * self.p1 * k2 ** self.p2 + self.gamma * self.p1) / ((self.p1 + self.q1) * k1 ** self.q1)
        b = (self.beta * self.p2 * k1 ** self.p1 + self.gamma * self.p2) / ((self.p2 + self.q2) * k2 ** self.q2)
        return a, b


def _pospow(s, e):
    """(s^+)^e with the convention (s^+)^0 = 1 for s > 0 and 0 otherwise."""
    sp = np.maximum(s, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(s > 0, sp ** e, 0.0)


def _abspow(s, e):
    a = np.abs(s)
    if e == 0:
        return np.ones_like(a)
    return a ** e


def example_family(params: ExampleParams, k=(1.0, 1.0), d=(-1.0, -1.0)) -> NonlinearitySpec:
    """Coupled power-law potential

        g = -alpha(|s1|^(p1+q1) + |s2|^(p2+q2)) + beta (s1^+)^p1 (s2^+)^p2 + gamma(|s1|^p1 + |s2|^p2).
    """
    a, b, c = params.alpha, params.beta, params.gamma
    p1, p2, q1, q2 = params.p1, params.p2, params.q1, params.q2
    r1, r2 = p1 + q1, p2 + q2

    def potential(x, s1, s2):
        s1, s2 = np.broadcast_arrays(np.asarray(s1, float), np.asarray(s2, float))
        return (-a * (_abspow(s1, r1) + _abspow(s2, r2)) + b * _pospow(s1, p1) * _pospow(s2, p2)
                + c * (_abspow(s1, p1) + _abspow(s2, p2)))

    def gradient(x, s1, s2):
        s1, s2 = np.broadcast_arrays(np.asarray(s1, float), np.asarray(s2, float))
        g1 = (-a * r1 * _abspow(s1, r1 - 2) * s1 + b * p1 * _pospow(s1, p1 - 1) * _pospow(s2, p2)
              + c * p1 * _abspow(s1, p1 - 2) * s1)
        g2 = (-a * r2 * _abspow(s2, r2 - 2) * s2 + b * p2 * _pospow(s2, p2 - 1) * _pospow(s1, p1)
              + c * p2 * _abspow(s2, p2 - 2) * s2)
        return g1, g2

    def hessian(x, s1, s2):
        s1, s2 = np.broadcast_arrays(np.asarray(s1, float), np.asarray(s2, float))
        h11 = (-a * r1 * (r1 - 1) * _abspow(s1, r1 - 2)
               + b * p1 * (p1 - 1) * _pospow(s1, p1 - 2) * _pospow(s2, p2)
               + c * p1 * (p1 - 1) * _abspow(s1, p1 - 2))
        h22 = (-a * r2 * (r2 - 1) * _abspow(s2, r2 - 2)
               + b * p2 * (p2 - 1) * _pospow(s2, p2 - 2) * _pospow(s1, p1)
               + c * p2 * (p2 - 1) * _abspow(s2, p2 - 2))
        h12 = b * p1 * p2 * _pospow(s1, p1 - 1) * _pospow(s2, p2 - 1)
        return h11, h12, h22

    consts = {"c": (c * p1, c * p2)}
    return NonlinearitySpec(potential, gradient, hessian, tuple(map(float, k)), tuple(map(float, d)),
                            (float(p1), float(p2)), consts, "example",
                            {"alpha": a, "beta": b, "gamma": c, "p1": p1, "p2": p2, "q1": q1, "q2": q2})


def expression_spec(text: str, k=(1.0, 1.0), d=(-1.0, -1.0), p=(2.0, 2.0)) -> NonlinearitySpec:
    """Spec from a potential string such as ``"-abs(s1)^3 + 1.5*s1^2 + s2^2"``."""
    e = Expression(text)
    return NonlinearitySpec(e.potential, e.gradient, e.hessian, tuple(map(float, k)),
                            tuple(map(float, d)), tuple(map(float, p)), {}, "expression",
                            {"potential": text})


def zero_spec(k=(1.0, 1.0), d=(-1.0, -1.0), p=(2.0, 2.0)) -> NonlinearitySpec:
    def potential(x, s1, s2):
        return np.zeros(np.broadcast(np.asarray(s1), np.asarray(s2)).shape)

    def gradient(x, s1, s2):
        z = potential(x, s1, s2)
        return z, z.copy()

    def hessian(x, s1, s2):
        z = potential(x, s1, s2)
        return z, z.copy(), z.copy()

    return NonlinearitySpec(potential, gradient, hessian, tuple(map(float, k)), tuple(map(float, d)),
                            tuple(map(float, p)), {}, "zero", {})


def _finite(value, what):
    arr = np.asarray(value)
    if not np.all(np.isfinite(arr)):
        raise NumericOverflowError(f"non-finite {what}")
    return value


def eval_potential(spec: NonlinearitySpec, x, s1, s2):
    out = spec.potential(x, s1, s2)
    _finite(out, "potential value")
    return float(out) if np.ndim(out) == 0 else out


def eval_gradient(spec: NonlinearitySpec, x, s1, s2):
    g1, g2 = spec.gradient(x, s1, s2)
    _finite(g1, "gradient value")
    _finite(g2, "gradient value")
    if np.ndim(g1) == 0:
        return float(g1), float(g2)
    return g1, g2


def eval_hessian(spec: NonlinearitySpec, x, s1, s2):
    h = spec.hessian(x, s1, s2)
    for part in h:
        _finite(part, "hessian value")
    return tuple(float(v) for v in h) if np.ndim(h[0]) == 0 else h


# ---------------------------------------------------------------- audit


@dataclass
class HypothesisCheck:
    verdict: str                      # "pass" | "fail" | "inconclusive"
    margin: float
    witness: dict | None = None
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return {"verdict": self.verdict, "margin": self.margin, "witness": self.witness,
                "details": self.details}


@dataclass
class HypothesisReport:
    checks: dict

    @property
    def verdict(self) -> str:
        verdicts = {c.verdict for c in self.checks.values()}
        if "fail" in verdicts:
            return "fail"
        if "inconclusive" in verdicts:
            return "inconclusive"
        return "pass"

    def failures(self):
        return {k: c for k, c in self.checks.items() if c.verdict == "fail"}

    def to_dict(self):
        return {"verdict": self.verdict, "checks": {k: c.to_dict() for k, c in self.checks.items()}}


@dataclass(frozen=True)
class EigenLevels:
    """Steklov eigenvalues per component and which one the limit hypotheses compare against.

    ``use`` holds "first" or "second" per component; the three-solution
    pipeline audits against the second level.
    """

    lambda1: tuple
    lambda2: tuple | None = None
    use: tuple = ("first", "first")

    def level(self, i: int) -> float:
        if self.use[i] == "second":
            if self.lambda2 is None:
                raise InvalidArgumentError("second eigenvalues required for the chosen level")
            return float(self.lambda2[i])
        return float(self.lambda1[i])


def _verdict(margin, tol):
    if margin > tol:
        return "pass"
    if margin < -tol:
        return "fail"
    return "inconclusive"


def _point(x, s1, s2):
    w = {"s1": float(s1), "s2": float(s2)}
    if x is not None:
        w["x"] = [float(v) for v in np.atleast_1d(x)]
    return w


def _ladder(lo=LADDER_MIN, hi=1e-1, factor=0.5):
    n = int(np.ceil(np.log(lo / hi) / np.log(factor))) + 1
    return hi * factor ** np.arange(n)


def limit_quotients(spec, comp, sign, x, other, ladder=None):
    """Quotients g_i(s_i, s_other) / (|s_i|^(p_i-2) s_i) along s_i = sign*ladder.

    Returns an array of shape (len(ladder), len(other)).
    """
    ladder = _ladder() if ladder is None else np.asarray(ladder)
    p = spec.p[comp]
    s = sign * ladder[:, None]
    o = np.asarray(other, float)[None, :]
    s1, s2 = (s, o) if comp == 0 else (o, s)
    g = eval_gradient(spec, x, *np.broadcast_arrays(s1, s2))[comp]
    return g / (np.abs(s) ** (p - 2) * s)


def h2_radius(spec, levels: EigenLevels, grid: int = 64, x_points=None) -> float:
    """Largest ladder radius r with g_i(s_i, .)/|s_i|^(p_i-1) > level_i for all 0 < |s_i| <= r.

    Covers both components and both signs with the other variable on its
    same-sign box side. Used to size the constant-sign subsolutions.
    """
    ladder = np.geomspace(max(max(spec.k), max(-np.array(spec.d))), LADDER_MIN, 400)
    radius = np.inf
    for x in _x_points(x_points):
        for comp in (0, 1):
            oc = 1 - comp
            for sign in (1.0, -1.0):
                hi = spec.k[comp] if sign > 0 else -spec.d[comp]
                lad = ladder[ladder <= hi]
                other = _side_grid(spec, oc, sign, grid)
                q = limit_quotients(spec, comp, sign, x, other, lad).min(axis=1)
                ok = q > levels.level(comp)
                # walk in from the largest radius until the tail is entirely admissible
                bad = np.nonzero(~ok)[0]
                r = lad[bad.max() + 1] if bad.size and bad.max() + 1 < lad.size else (
                    0.0 if bad.size else lad[0])
                radius = min(radius, r)
    return float(radius)


def _side_grid(spec, comp, sign, grid):
    if sign > 0:
        return np.linspace(spec.k[comp], 0.0, grid, endpoint=False)[::-1]
    return np.linspace(spec.d[comp], 0.0, grid, endpoint=False)


def _x_points(x_points):
    if x_points is None:
        return [None]
    return list(np.atleast_2d(np.asarray(x_points, dtype=float)))


def check_hypotheses(spec: NonlinearitySpec, levels: EigenLevels, grid: int = 33,
                     x_points=None, seed: int = 0, n_pairs: int = 2000) -> HypothesisReport:
    """Sample every structural hypothesis on the box [d1,k1] x [d2,k2].

    Never raises on a violated hypothesis; each check carries its margin
    (positive = satisfied) and, for failures, the worst sample as witness.
    """
    if grid < 16:
        raise InvalidArgumentError(f"grid resolution must be >= 16 per axis, got {grid}")
    xs = _x_points(x_points)
    checks = {"H0": _check_h0(spec, xs, grid, seed, n_pairs), "H1": _check_h1(spec, xs, grid)}
    checks["H2"], checks["H3"] = _check_limits(spec, levels, xs, grid)
    checks["H4"] = _check_h4(spec, xs, grid)
    checks["H5"] = _check_subhomogeneous(spec, 0, xs, grid)
    checks["H6"] = _check_subhomogeneous(spec, 1, xs, grid)
    if spec.label == "example" and levels.lambda2 is not None:
        checks["example_gamma"] = _check_example_gamma(spec, levels)
    return HypothesisReport(checks)


def _box_grid(spec, grid):
    s1 = np.linspace(spec.d[0], spec.k[0], grid)
    s2 = np.linspace(spec.d[1], spec.k[1], grid)
    return np.meshgrid(s1, s2, indexing="ij")


def _check_h0(spec, xs, grid, seed, n_pairs):
    rng = np.random.default_rng(seed)
    worst_origin, witness = 0.0, None
    sup = np.zeros(2)
    lip = np.zeros(2)
    S1, S2 = _box_grid(spec, grid)
    try:
        for x in xs:
            vals = np.abs([eval_potential(spec, x, 0.0, 0.0), *eval_gradient(spec, x, 0.0, 0.0)])
            if vals.max() > worst_origin:
                worst_origin, witness = float(vals.max()), _point(x, 0.0, 0.0)
            g1, g2 = eval_gradient(spec, x, S1, S2)
            sup = np.maximum(sup, [np.abs(g1).max(), np.abs(g2).max()])
            a = np.column_stack([rng.uniform(spec.d[i], spec.k[i], n_pairs) for i in (0, 1)])
            b = np.column_stack([rng.uniform(spec.d[i], spec.k[i], n_pairs) for i in (0, 1)])
            ga = np.array(eval_gradient(spec, x, a[:, 0], a[:, 1]))
            gb = np.array(eval_gradient(spec, x, b[:, 0], b[:, 1]))
            dist = np.abs(a - b).sum(axis=1)
            lip = np.maximum(lip, (np.abs(ga - gb) / dist).max(axis=1))
    except NumericOverflowError as exc:
        return HypothesisCheck("fail", -np.inf, None, {"reason": str(exc)})
    details = {"sup_gradient": sup.tolist(), "lipschitz_estimate": lip.tolist(),
               "holder_exponent": 1.0, "sup_le_lipschitz": bool(np.all(sup <= lip)),
               "origin_value": worst_origin}
    verdict = "pass" if worst_origin <= GRID_SLACK else "fail"
    return HypothesisCheck(verdict, -worst_origin, witness if verdict == "fail" else None, details)


def _check_h1(spec, xs, grid):
    k1, k2 = spec.k
    d1, d2 = spec.d
    lines = [  # (component, fixed value, other range, required sign: +1 means g <= 0)
        ("g1(k1, s2) <= 0, s2 in [0,k2]", 0, k1, np.linspace(0, k2, grid), 1),
        ("g1(d1, s2) >= 0, s2 in [d2,0]", 0, d1, np.linspace(d2, 0, grid), -1),
        ("g2(s1, k2) <= 0, s1 in [0,k1]", 1, k2, np.linspace(0, k1, grid), 1),
        ("g2(s1, d2) >= 0, s1 in [d1,0]", 1, d2, np.linspace(d1, 0, grid), -1),
    ]
    worst, witness, per_line = np.inf, None, {}
    for name, comp, fixed, other, sgn in lines:
        line_margin = np.inf
        for x in xs:
            s1, s2 = (np.full_like(other, fixed), other) if comp == 0 else (other, np.full_like(other, fixed))
            g = eval_gradient(spec, x, s1, s2)[comp]
            m = -sgn * g
            j = int(np.argmin(m))
            line_margin = min(line_margin, float(m[j]))
            if m[j] < worst:
                worst, witness = float(m[j]), _point(x, s1[j], s2[j])
        per_line[name] = line_margin
    verdict = _verdict(worst, GRID_SLACK)
    return HypothesisCheck(verdict, worst, witness if verdict != "pass" else None, {"lines": per_line})


def _check_limits(spec, levels, xs, grid):
    """liminf (lower) and limsup (upper) of the near-zero quotients on a geometric ladder."""
    ladder = _ladder()
    tail = ladder[-8:]
    lower_rows, c_meas, a_meas = {}, [np.inf, np.inf], [-np.inf, -np.inf]
    worst, witness, unsettled = np.inf, None, False
    for comp in (0, 1):
        oc = 1 - comp
        lam = levels.level(comp)
        for sign, label in ((1.0, "+"), (-1.0, "-")):
            other = _side_grid(spec, oc, sign, grid)
            for x in xs:
                q = limit_quotients(spec, comp, sign, x, other, tail)
                lo, hi = q.min(axis=0), q.max(axis=0)
                # tail drift relative to the level decides whether the ladder has settled
                drift = np.abs(q[-1] - q[0]).max()
                if drift > LIMIT_MARGIN * max(1.0, abs(lam)):
                    unsettled = True
                j = int(np.argmin(lo))
                m = float(lo[j] - lam)
                c_meas[comp] = min(c_meas[comp], float(lo.min()))
                a_meas[comp] = max(a_meas[comp], float(hi.max()))
                key = f"g{comp + 1} at s{comp + 1}->0{label}"
                lower_rows[key] = min(lower_rows.get(key, np.inf), m)
                if m < worst:
                    s_i = sign * tail[-1]
                    witness = _point(x, s_i, other[j]) if comp == 0 else _point(x, other[j], s_i)
                    worst = m
    v2 = _verdict(worst, LIMIT_MARGIN)
    if v2 == "pass" and unsettled:
        v2 = "inconclusive"
    h2 = HypothesisCheck(v2, worst, witness if v2 != "pass" else None,
                         {"c_measured": c_meas, "levels": [levels.level(0), levels.level(1)],
                          "rows": lower_rows, "ladder_min": float(tail[-1]), "settled": not unsettled})
    # upper limits: finite limsup gives alpha_i; report both readings of alpha_i >= c_i
    finite = all(np.isfinite(a_meas))
    margin_a = min(a_meas[i] - c_meas[i] for i in (0, 1)) if finite else -np.inf
    readings = {"alpha_ge_c": margin_a}
    if levels.lambda2 is not None:
        readings["alpha_gt_lambda2"] = min(a_meas[i] - levels.lambda2[i] for i in (0, 1))
    v3 = "pass" if finite and margin_a >= -LIMIT_MARGIN else "fail"
    if v3 == "pass" and unsettled:
        v3 = "inconclusive"
    h3 = HypothesisCheck(v3, float(margin_a), None, {"alpha_measured": a_meas, "readings": readings})
    return h2, h3


def _check_h4(spec, xs, grid):
    S1, S2 = _box_grid(spec, grid)
    worst, witness = np.inf, None
    for x in xs:
        g1, g2 = eval_gradient(spec, x, S1, S2)
        d1 = np.diff(g1, axis=1)     # g1 along s2
        d2 = np.diff(g2, axis=0)     # g2 along s1
        for diffs, axis in ((d1, 1), (d2, 0)):
            idx = np.unravel_index(int(np.argmin(diffs)), diffs.shape)
            if diffs[idx] < worst:
                worst = float(diffs[idx])
                witness = _point(x, S1[idx], S2[idx])
    verdict = "pass" if worst >= -GRID_SLACK else "fail"
    return HypothesisCheck(verdict, worst, witness if verdict == "fail" else None, {})


def _check_subhomogeneous(spec, comp, xs, grid):
    """g_i(t s e_i) against t^(p_i-1) g_i(s e_i) for t in [0,1] on both sign ranges."""
    p = spec.p[comp]
    t = np.linspace(0.0, 1.0, grid)[:, None]
    worst, witness = np.inf, None
    for x in xs:
        for lo, hi, sgn in ((spec.d[comp], 0.0, -1.0), (0.0, spec.k[comp], 1.0)):
            s = np.linspace(lo, hi, grid)[None, :]
            ts = t * s
            z = np.zeros_like(ts)
            args_t = (ts, z) if comp == 0 else (z, ts)
            args_1 = (s + 0 * t, z) if comp == 0 else (z, s + 0 * t)
            lhs = eval_gradient(spec, x, *args_t)[comp]
            rhs = t ** (p - 1) * eval_gradient(spec, x, *args_1)[comp]
            # negative side needs lhs <= rhs, positive side lhs >= rhs
            m = sgn * (lhs - rhs)
            idx = np.unravel_index(int(np.argmin(m)), m.shape)
            if m[idx] < worst:
                worst = float(m[idx])
                witness = {"t": float(t[idx[0], 0]), **_point(x, *(a[idx] for a in args_1))}
    verdict = "pass" if worst >= -GRID_SLACK else "fail"
    return HypothesisCheck(verdict, worst, witness if verdict == "fail" else None, {})


def _check_example_gamma(spec, levels):
    """gamma against the example's stated eigenvalue bound, under both readings."""
    gamma = spec.params["gamma"]
    p1, p2 = spec.p
    l1, l2 = levels.lambda1, levels.lambda2
    literal = gamma - max(l1[0] / p1, l2[1] / p2)
    alternative = gamma - max(l2[0] / p1, l2[1] / p2)
    verdict = "pass" if literal > 0 else "fail"
    return HypothesisCheck(verdict, float(literal), None,
                           {"literal_margin": float(literal), "second_level_margin": float(alternative)})
