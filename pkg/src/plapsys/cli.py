"""Command-line driver: ``plapsys <command> --config FILE --out DIR``.

Config files are flat ``dotted.key = value`` lines (``#`` comments allowed).
Every run writes ``report.json`` into the output directory, plus CSV plot
data where the command produces any. Exit codes: 0 success, 1 hypothesis
failure, 2 config error, 3 inconclusive audit, 4 solver failure.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConvergenceError, InvalidArgumentError, PlapsysError, PreconditionError
from .gradcheck import (energy_gradient_check, example_contexts, potential_gradient_check,
                        truncation_gradient_check)
from .mesh import QUADRATURES, SystemState, build_mesh
from .nonlinearity import (EigenLevels, ExampleParams, check_hypotheses, example_family,
                           expression_spec, zero_spec)
from .solvers import (SolverOptions, StageError, maximal_negative_solution,
                      minimal_positive_solution, three_solutions)
from .steklov import EigenOptions, PathOptions, first_eigenpair, second_eigenvalue_minimax
from .truncation import Bounds

EXIT_OK, EXIT_HYPOTHESIS, EXIT_CONFIG, EXIT_INCONCLUSIVE, EXIT_SOLVER = 0, 1, 2, 3, 4


class ConfigError(Exception):
    pass


# config key -> (RunConfig field, parser)
def _choice(*options):
    def parse(v):
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return v
    return parse


def _opt_float(v):
    return None if v.lower() in ("", "none", "auto") else float(v)


KEYS = {
    "mesh.kind": ("mesh_kind", _choice("interval", "square")),
    "mesh.n": ("mesh_n", int),
    "problem.p1": ("p1", float),
    "problem.p2": ("p2", float),
    "problem.k1": ("k1", float),
    "problem.k2": ("k2", float),
    "problem.d1": ("d1", float),
    "problem.d2": ("d2", float),
    "nonlinearity.kind": ("nonlinearity", _choice("example", "expression", "zero")),
    "example.alpha": ("alpha", float),
    "example.beta": ("beta", float),
    "example.gamma": ("gamma", float),
    "example.q1": ("q1", float),
    "example.q2": ("q2", float),
    "expression.potential": ("potential", str),
    "solver.tol": ("tol", float),
    "solver.max_iter": ("max_iter", int),
    "solver.eps0": ("eps0", _opt_float),
    "solver.shrink": ("shrink", float),
    "solver.ladder_max": ("ladder_max", int),
    "solver.path_nodes": ("path_nodes", int),
    "solver.saddle_factor": ("saddle_factor", float),
    "eigen.tol": ("eigen_tol", float),
    "eigen.path_nodes": ("eigen_path_nodes", int),
    "audit.grid": ("audit_grid", int),
    "audit.level": ("audit_level", _choice("first", "second")),
    "discretization.delta": ("delta", float),
    "discretization.quadrature": ("quadrature", _choice(*QUADRATURES)),
    "gradcheck.samples": ("gradcheck_samples", int),
    "run.seed": ("seed", int),
    "run.out": ("out", str),
}


@dataclass
class RunConfig:
    mesh_kind: str = "interval"
    mesh_n: int = 100
    p1: float = 2.0
    p2: float = 2.0
    k1: float = 1.0
    k2: float = 1.0
    d1: float = -1.0
    d2: float = -1.0
    nonlinearity: str = "example"
    alpha: float = 2.0
    beta: float = 1.0
    gamma: float = 1.5
    q1: float = 1.0
    q2: float = 1.0
    potential: str = ""
    tol: float = 1e-10
    max_iter: int = 20000
    eps0: float | None = None
    shrink: float = 0.5
    ladder_max: int = 40
    path_nodes: int = 33
    saddle_factor: float = 10.0
    eigen_tol: float = 1e-10
    eigen_path_nodes: int = 33
    audit_grid: int = 33
    audit_level: str = "second"
    delta: float = 1e-10
    quadrature: str = "vertex"
    gradcheck_samples: int = 1000
    seed: int = 0
    out: str = "out"

    def __post_init__(self):
        if self.mesh_n < 1:
            raise ConfigError("mesh.n: must be a positive integer")
        for key in ("p1", "p2"):
            if not getattr(self, key) > 1:
                raise ConfigError(f"problem.{key}: exponent must exceed 1")
        for key in ("k1", "k2"):
            if not getattr(self, key) > 0:
                raise ConfigError(f"problem.{key}: must be positive")
        for key in ("d1", "d2"):
            if not getattr(self, key) < 0:
                raise ConfigError(f"problem.{key}: must be negative")
        if self.nonlinearity == "expression" and not self.potential.strip():
            raise ConfigError("expression.potential: required when nonlinearity.kind = expression")
        if not 0 < self.shrink < 1:
            raise ConfigError("solver.shrink: must lie in (0, 1)")
        if not self.tol > 0:
            raise ConfigError("solver.tol: must be positive")

    @property
    def k(self):
        return (self.k1, self.k2)

    @property
    def d(self):
        return (self.d1, self.d2)

    @property
    def p(self):
        return (self.p1, self.p2)

    def spec(self):
        try:
            if self.nonlinearity == "example":
                params = ExampleParams(self.alpha, self.beta, self.gamma, self.p1, self.p2,
                                       self.q1, self.q2)
                return example_family(params, self.k, self.d)
            if self.nonlinearity == "expression":
                return expression_spec(self.potential, self.k, self.d, self.p)
            return zero_spec(self.k, self.d, self.p)
        except InvalidArgumentError as exc:
            key = "expression.potential" if self.nonlinearity == "expression" else "example"
            raise ConfigError(f"{key}: {exc}") from None

    def mesh(self):
        return build_mesh(self.mesh_kind, self.mesh_n)

    def solver_options(self) -> SolverOptions:
        return SolverOptions(tol=self.tol, max_iter=self.max_iter, eps0=self.eps0,
                             shrink=self.shrink, ladder_max=self.ladder_max,
                             path_nodes=self.path_nodes, saddle_factor=self.saddle_factor,
                             seed=self.seed, delta=self.delta, quadrature=self.quadrature)

    def eigen_options(self) -> EigenOptions:
        return EigenOptions(tol=self.eigen_tol, seed=self.seed, delta=self.delta,
                            quadrature=self.quadrature)

    def path_options(self) -> PathOptions:
        return PathOptions(m=self.eigen_path_nodes, seed=self.seed, delta=self.delta,
                           quadrature=self.quadrature)

    def to_dict(self):
        return {key: getattr(self, name) for key, (name, _) in KEYS.items()}


def parse_config(text: str, overrides: dict | None = None) -> RunConfig:
    """Parse dotted key-value text into a RunConfig; unknown keys raise ConfigError."""
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",),
                                       delimiters=("=", ":"))
    parser.optionxform = str
    try:
        parser.read_string("[config]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    values = {}
    items = list(parser.items("config")) + list((overrides or {}).items())
    for key, raw in items:
        if key not in KEYS:
            raise ConfigError(f"unknown config key {key!r}")
        name, conv = KEYS[key]
        try:
            values[name] = conv(raw.strip()) if isinstance(raw, str) else raw
        except ValueError as exc:
            raise ConfigError(f"{key}: invalid value {raw!r} ({exc})") from None
    return RunConfig(**values)


def load_config(path, overrides=None) -> RunConfig:
    text = Path(path).read_text() if path else ""
    return parse_config(text, overrides)


# ---------------------------------------------------------------- output


def jsonable(obj):
    """Recursively convert numpy values, dataclass-free containers and non-finite floats."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def without_timing(report):
    """Copy of a report with every ``wall_time*`` field removed, for run-to-run comparison."""
    if isinstance(report, dict):
        return {k: without_timing(v) for k, v in report.items() if not k.startswith("wall_time")}
    if isinstance(report, list):
        return [without_timing(v) for v in report]
    return report


def load_schema(report: dict) -> dict:
    """JSON schema shipped with the package that ``report`` must satisfy."""
    name = "error" if report.get("status") == "error" else report["command"].replace("-", "_")
    text = resources.files("plapsys").joinpath("schemas", f"{name}.schema.json").read_text()
    return json.loads(text)


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: Path, report: dict):
    # json writes floats with repr, the shortest string that round-trips exactly
    _atomic_write(path, json.dumps(jsonable(report), indent=2, allow_nan=False) + "\n")


def write_csv(path: Path, header, columns):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for row in zip(*columns):
        w.writerow([v if isinstance(v, (int, np.integer)) else f"{v:.17g}" for v in row])
    _atomic_write(path, buf.getvalue())


def _coord_columns(mesh):
    names = ["x", "y"][: mesh.dimension]
    return ["node", *names], [np.arange(mesh.n_nodes), *mesh.node_coords.T]


def _state_dict(state: SystemState):
    return {"u1": state.u1.values, "u2": state.u2.values}


# ---------------------------------------------------------------- commands


def _eigenpairs(cfg, mesh, second=True):
    out = {}
    for p in sorted(set(cfg.p)):
        first = first_eigenpair(mesh, p, cfg.eigen_options())
        entry = {"first": first}
        if second:
            entry["lambda2"], entry["path"] = second_eigenvalue_minimax(mesh, p, first,
                                                                        cfg.path_options())
        out[p] = entry
    return out


def _eigen_section(eig):
    return [{"p": p, "lambda1": e["first"].eigenvalue, "lambda2": e.get("lambda2"),
             "iterations": e["first"].iterations,
             "path_sweeps": e["path"].sweeps if "path" in e else None,
             "wall_time_path": e["path"].wall_time if "path" in e else None}
            for p, e in eig.items()]


def _write_eigen_csv(out, mesh, eig):
    head, cols = _coord_columns(mesh)
    for p, e in eig.items():
        head.append(f"u1_p{p:g}")
        cols.append(e["first"].eigenfunction.values)
    write_csv(out / "eigenfunctions.csv", head, cols)


def cmd_eigen(cfg: RunConfig, out: Path) -> tuple[int, dict]:
    mesh = cfg.mesh()
    eig = _eigenpairs(cfg, mesh)
    _write_eigen_csv(out, mesh, eig)
    head, cols = ["index"], [np.arange(cfg.eigen_path_nodes)]
    for p, e in eig.items():
        head.append(f"rayleigh_p{p:g}")
        cols.append(e["path"].values)
    write_csv(out / "path_energy.csv", head, cols)
    maxima = {}
    for p, e in eig.items():
        top = e["path"].states[e["path"].max_index][mesh.boundary_nodes]
        maxima[f"{p:g}"] = {"index": e["path"].max_index,
                            "trace_min": float(top.min()), "trace_max": float(top.max())}
    return EXIT_OK, {"eigenpairs": _eigen_section(eig), "path_maxima": maxima}


def _levels(cfg, eig):
    lam1 = tuple(eig[p]["first"].eigenvalue for p in cfg.p)
    lam2 = tuple(eig[p]["lambda2"] for p in cfg.p) if cfg.audit_level == "second" else None
    return EigenLevels(lam1, lam2, (cfg.audit_level,) * 2)


def cmd_check_hypotheses(cfg: RunConfig, out: Path) -> tuple[int, dict]:
    mesh = cfg.mesh()
    spec = cfg.spec()
    eig = _eigenpairs(cfg, mesh, second=cfg.audit_level == "second")
    report = check_hypotheses(spec, _levels(cfg, eig), grid=cfg.audit_grid, seed=cfg.seed,
                              x_points=mesh.node_coords[mesh.boundary_nodes])
    code = {"pass": EXIT_OK, "fail": EXIT_HYPOTHESIS, "inconclusive": EXIT_INCONCLUSIVE}
    for name, check in report.failures().items():
        print(f"{name}: fail, witness {jsonable(check.witness)}", file=sys.stderr)
    return code[report.verdict], {"eigenpairs": _eigen_section(eig), "hypotheses": report.to_dict()}


def cmd_extremal(cfg: RunConfig, out: Path) -> tuple[int, dict]:
    mesh = cfg.mesh()
    spec = cfg.spec()
    e1 = first_eigenpair(mesh, cfg.p1, cfg.eigen_options())
    e2 = e1 if cfg.p2 == cfg.p1 else first_eigenpair(mesh, cfg.p2, cfg.eigen_options())
    opts = cfg.solver_options()
    pos, rp = minimal_positive_solution(mesh, spec, (e1, e2), opts)
    neg, rn = maximal_negative_solution(mesh, spec, (e1, e2), opts)
    head, cols = _coord_columns(mesh)
    write_csv(out / "solutions.csv", head + ["positive_u1", "positive_u2", "negative_u1",
                                             "negative_u2"],
              cols + [pos.u1.values, pos.u2.values, neg.u1.values, neg.u2.values])
    return EXIT_OK, {"positive": {**_state_dict(pos), "report": rp.summary()},
                     "negative": {**_state_dict(neg), "report": rn.summary()}}


def cmd_three_solutions(cfg: RunConfig, out: Path) -> tuple[int, dict]:
    mesh = cfg.mesh()
    spec = cfg.spec()
    res = three_solutions(mesh, spec, cfg.solver_options(), cfg.path_options(), cfg.audit_grid)
    head, cols = _coord_columns(mesh)
    states = {"positive": res.positive, "negative": res.negative, "third": res.third}
    extra_h, extra_c = [], []
    for name, st in states.items():
        extra_h += [f"{name}_u1", f"{name}_u2"]
        extra_c += [st.u1.values, st.u2.values]
    write_csv(out / "solutions.csv", head + extra_h, cols + extra_c)
    write_csv(out / "path_energy.csv", ["index", "energy"],
              [np.arange(len(res.final_path_energies)), res.final_path_energies])
    e1, e2 = res.eigen["first"]
    eig = {cfg.p1: {"first": e1}}
    eig.setdefault(cfg.p2, {"first": e2})
    _write_eigen_csv(out, mesh, eig)
    solutions = {}
    for (name, st), en, r in zip(states.items(), res.energies, res.residuals):
        solutions[name] = {**_state_dict(st), "energy": en, "residual": r}
    report = {
        "eigen": {"lambda1": res.eigen["lambda1"], "lambda2": res.eigen["lambda2"]},
        "hypotheses_verdict": res.hypotheses.verdict,
        "solutions": solutions,
        "mountain_pass_value": res.mountain_pass_value,
        "ordering_margins": res.ordering_margins,
        "negative_path": {"eps": res.path.eps, "orientation": res.path.orientation,
                       "n_states": len(res.path.states),
                       "max_energy": float(res.path.energies.max()),
                       "eps_tried": res.path.details["eps_tried"]},
        "stages": {name: {k: v for k, v in rep.summary().items()
                          if k not in ("path", "path_energies", "ladder")}
                   for name, rep in res.reports.items()},
    }
    report["stages"]["mountain_pass"].pop("newton_residuals", None)
    return EXIT_OK, report


def cmd_gradcheck(cfg: RunConfig, out: Path) -> tuple[int, dict]:
    mesh = cfg.mesh()
    spec = cfg.spec()
    n = cfg.gradcheck_samples
    half_up = (0.5 * cfg.k1, 0.5 * cfg.k2)
    half_lo = (0.5 * cfg.d1, 0.5 * cfg.d2)
    bounds = Bounds(half_lo, half_up)
    results = {"potential": potential_gradient_check(spec, n, cfg.seed)}
    for kind in ("plus", "minus", "zero"):
        results[f"truncated_{kind}"] = truncation_gradient_check(spec, kind, bounds, n, cfg.seed)
    pos = SystemState.from_arrays(mesh, np.full(mesh.n_nodes, half_up[0]),
                                  np.full(mesh.n_nodes, half_up[1]))
    neg = SystemState.from_arrays(mesh, np.full(mesh.n_nodes, half_lo[0]),
                                  np.full(mesh.n_nodes, half_lo[1]))
    ctxs = example_contexts(mesh, spec, pos, neg, delta=cfg.delta, quadrature=cfg.quadrature)
    for kind, ctx in ctxs.items():
        results[f"energy_{kind}"] = energy_gradient_check(ctx, n, cfg.seed)
    for name, err in results.items():
        print(f"{name}: max relative error {err:.3e}")
    return EXIT_OK, {"samples": n, "max_relative_error": results}


COMMANDS = {
    "eigen": cmd_eigen,
    "extremal": cmd_extremal,
    "three-solutions": cmd_three_solutions,
    "check-hypotheses": cmd_check_hypotheses,
    "gradcheck": cmd_gradcheck,
}


# ---------------------------------------------------------------- entry point


def _failure(exc) -> tuple[int, dict]:
    stage = None
    if isinstance(exc, StageError):
        stage, exc = exc.stage, exc.error
    diag = {"stage": stage, "error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, PreconditionError):
        details = dict(exc.details)
        audit = details.pop("report", None)
        if audit is not None:
            diag["hypotheses"] = audit.to_dict()
            for name, check in audit.failures().items():
                print(f"{name}: fail, witness {jsonable(check.witness)}", file=sys.stderr)
            code = EXIT_HYPOTHESIS if audit.verdict == "fail" else EXIT_INCONCLUSIVE
            return code, {"diagnostic": {**diag, "details": details}}
        diag["details"] = details
    if isinstance(exc, ConvergenceError) and exc.report is not None:
        diag["report"] = {k: v for k, v in exc.report.summary().items()
                          if k not in ("path", "path_energies", "ladder")}
    return EXIT_SOLVER, {"diagnostic": diag}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="plapsys", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="dotted key = value config file")
        sp.add_argument("--out", help="output directory (overrides run.out)")
        sp.add_argument("--seed", type=int, help="random seed (overrides run.seed)")
        sp.add_argument("--mesh-n", type=int, help="mesh resolution (overrides mesh.n)")
    return ap


def run(command: str, cfg: RunConfig, out: Path) -> int:
    """Run one command, write report.json (success or diagnostic) and return the exit code."""
    t0 = time.perf_counter()
    try:
        code, body = COMMANDS[command](cfg, out)
        status = {EXIT_OK: "ok", EXIT_HYPOTHESIS: "hypothesis_failure",
                  EXIT_INCONCLUSIVE: "inconclusive"}[code]
    except (PlapsysError, StageError, ArithmeticError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        code, body = _failure(exc)
        status = "error"
        print(f"{command} failed: {body['diagnostic']['message']}", file=sys.stderr)
    report = {"command": command, "status": status, "exit_code": code, "version": __version__,
              "config": cfg.to_dict(), **body, "wall_time": time.perf_counter() - t0}
    write_json(out / "report.json", report)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {}
    if args.seed is not None:
        overrides["run.seed"] = args.seed
    if args.mesh_n is not None:
        overrides["mesh.n"] = args.mesh_n
    if args.out is not None:
        overrides["run.out"] = args.out
    try:
        cfg = load_config(args.config, overrides)
        cfg.spec()
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    limit = os.environ.get("SOLVER_THREADS")
    if limit:
        from threadpoolctl import threadpool_limits
        try:
            n_threads = int(limit)
        except ValueError:
            print(f"config error: SOLVER_THREADS must be an integer, got {limit!r}",
                  file=sys.stderr)
            return EXIT_CONFIG
        with threadpool_limits(limits=n_threads):
            return run(args.command, cfg, Path(cfg.out))
    return run(args.command, cfg, Path(cfg.out))


if __name__ == "__main__":
    sys.exit(main())
