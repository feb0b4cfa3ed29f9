"""Closed-form boundary potentials written as arithmetic strings.

Grammar: numbers, variables ``s1 s2 x1 x2`` (``x`` is ``x1``), the operators
``+ - * / ^`` (``**`` also accepted) and the functions ``abs``, ``pos``
(positive part) and ``neg`` (negative part, ``max(-u, 0)``). Parsing reuses
Python's own expression parser; only a whitelisted subset of its syntax tree
is accepted. Derivatives are taken symbolically so the potential, gradient
and Hessian stay consistent.
"""
from __future__ import annotations

import ast

import numpy as np

from .errors import InvalidArgumentError

VARIABLES = ("s1", "s2", "x1", "x2")
_FUNCS = ("abs", "pos", "neg")

# nodes are tuples: ("num", v) ("var", name) ("add"|"sub"|"mul"|"div", a, b)
# ("pow", base, exponent) ("neg_", a) ("abs"|"pos"|"neg"|"sign"|"step"|"nstep", a)


def parse(text: str):
    """Parse ``text`` into an expression tree; raises InvalidArgumentError on bad input."""
    if not isinstance(text, str) or not text.strip():
        raise InvalidArgumentError("empty expression")
    try:
        tree = ast.parse(text.replace("^", "**"), mode="eval")
    except SyntaxError as exc:
        raise InvalidArgumentError(f"cannot parse expression {text!r}: {exc.msg}") from None
    return _simplify(_convert(tree.body, text))


def _convert(node, text):
    if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
            and not isinstance(node.value, bool):
        return ("num", float(node.value))
    if isinstance(node, ast.Name):
        name = "x1" if node.id == "x" else node.id
        if name not in VARIABLES:
            raise InvalidArgumentError(f"unknown variable {node.id!r} in {text!r}")
        return ("var", name)
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        inner = _convert(node.operand, text)
        return ("neg_", inner) if isinstance(node.op, ast.USub) else inner
    if isinstance(node, ast.BinOp):
        ops = {ast.Add: "add", ast.Sub: "sub", ast.Mult: "mul", ast.Div: "div", ast.Pow: "pow"}
        kind = ops.get(type(node.op))
        if kind is None:
            raise InvalidArgumentError(f"unsupported operator in {text!r}")
        a, b = _convert(node.left, text), _convert(node.right, text)
        if kind == "pow" and _has_var(b):
            raise InvalidArgumentError(f"exponents must be constant in {text!r}")
        return (kind, a, b)
    if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) \
            and node.func.id in _FUNCS and len(node.args) == 1 and not node.keywords:
        return (node.func.id, _convert(node.args[0], text))
    raise InvalidArgumentError(f"unsupported syntax in {text!r}")


def _has_var(e) -> bool:
    if e[0] == "var":
        return True
    return any(_has_var(c) for c in e[1:] if isinstance(c, tuple))


def _num(e):
    return e[1] if e[0] == "num" else None


def _simplify(e):
    kind = e[0]
    if kind in ("num", "var"):
        return e
    args = [_simplify(c) for c in e[1:]]
    vals = [_num(a) for a in args]
    if all(v is not None for v in vals):
        with np.errstate(all="ignore"):
            return ("num", float(_apply(kind, [np.float64(v) for v in vals])))
    if kind == "add":
        if vals[0] == 0:
            return args[1]
        if vals[1] == 0:
            return args[0]
    elif kind == "sub":
        if vals[1] == 0:
            return args[0]
        if vals[0] == 0:
            return _simplify(("neg_", args[1]))
    elif kind == "mul":
        if 0 in (vals[0], vals[1]):
            return ("num", 0.0)
        if vals[0] == 1:
            return args[1]
        if vals[1] == 1:
            return args[0]
    elif kind == "div":
        if vals[0] == 0:
            return ("num", 0.0)
        if vals[1] == 1:
            return args[0]
    elif kind == "pow":
        if vals[1] == 1:
            return args[0]
        if vals[1] == 0:
            return ("num", 1.0)
    elif kind == "neg_" and args[0][0] == "neg_":
        return args[0][1]
    return (kind, *args)


def _apply(kind, v):
    if kind == "add":
        return v[0] + v[1]
    if kind == "sub":
        return v[0] - v[1]
    if kind == "mul":
        return v[0] * v[1]
    if kind == "div":
        return v[0] / v[1]
    if kind == "pow":
        return np.power(v[0], v[1])
    if kind == "neg_":
        return -v[0]
    if kind == "abs":
        return np.abs(v[0])
    if kind == "pos":
        return np.maximum(v[0], 0.0)
    if kind == "neg":
        return np.maximum(-v[0], 0.0)
    if kind == "sign":
        return np.sign(v[0])
    if kind == "step":
        return np.where(v[0] > 0, 1.0, 0.0)
    if kind == "nstep":
        return np.where(v[0] < 0, 1.0, 0.0)
    raise InvalidArgumentError(f"unknown node {kind}")


def diff(e, var: str):
    """Symbolic partial derivative. Kinks of abs/pos/neg take the one-sided value 0 at 0."""
    kind = e[0]
    if kind == "num":
        return ("num", 0.0)
    if kind == "var":
        return ("num", 1.0 if e[1] == var else 0.0)
    if kind in ("sign", "step", "nstep"):
        return ("num", 0.0)
    a = e[1]
    da = diff(a, var)
    if kind == "neg_":
        return _simplify(("neg_", da))
    if kind == "abs":
        return _simplify(("mul", ("sign", a), da))
    if kind == "pos":
        return _simplify(("mul", ("step", a), da))
    if kind == "neg":
        return _simplify(("neg_", ("mul", ("nstep", a), da)))
    b = e[2]
    db = diff(b, var)
    if kind == "add":
        return _simplify(("add", da, db))
    if kind == "sub":
        return _simplify(("sub", da, db))
    if kind == "mul":
        return _simplify(("add", ("mul", da, b), ("mul", a, db)))
    if kind == "div":
        return _simplify(("div", ("sub", ("mul", da, b), ("mul", a, db)), ("pow", b, ("num", 2.0))))
    if kind == "pow":
        c = _num(b)
        return _simplify(("mul", ("mul", ("num", c), ("pow", a, ("num", c - 1.0))), da))
    raise InvalidArgumentError(f"cannot differentiate node {kind}")


def evaluate(e, env: dict):
    kind = e[0]
    if kind == "num":
        return e[1]
    if kind == "var":
        if env.get(e[1]) is None:
            raise InvalidArgumentError(f"variable {e[1]!r} has no value (no coordinates given?)")
        return env[e[1]]
    return _apply(kind, [evaluate(c, env) for c in e[1:]])


class Expression:
    """Compiled potential with symbolic gradient and Hessian in (s1, s2)."""

    def __init__(self, text: str):
        self.text = text
        self.tree = parse(text)
        self.grad_trees = (diff(self.tree, "s1"), diff(self.tree, "s2"))
        self.hess_trees = (diff(self.grad_trees[0], "s1"), diff(self.grad_trees[0], "s2"),
                           diff(self.grad_trees[1], "s2"))

    def _env(self, x, s1, s2):
        s1 = np.asarray(s1, dtype=float)
        s2 = np.asarray(s2, dtype=float)
        env = {"s1": s1, "s2": s2, "x1": None, "x2": None}
        if x is not None:
            x = np.asarray(x, dtype=float)
            env["x1"] = x[..., 0]
            env["x2"] = x[..., 1] if x.shape[-1] > 1 else np.zeros_like(x[..., 0])
        return env, np.broadcast(s1, s2).shape

    def _eval(self, tree, x, s1, s2):
        env, shape = self._env(x, s1, s2)
        with np.errstate(all="ignore"):
            out = evaluate(tree, env)
        return np.broadcast_to(np.asarray(out, dtype=float), shape).copy() if shape else float(out)

    def potential(self, x, s1, s2):
        return self._eval(self.tree, x, s1, s2)

    def gradient(self, x, s1, s2):
        return tuple(self._eval(t, x, s1, s2) for t in self.grad_trees)

    def hessian(self, x, s1, s2):
        return tuple(self._eval(t, x, s1, s2) for t in self.hess_trees)
