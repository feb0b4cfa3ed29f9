import csv
import json
import math

import jsonschema
import numpy as np
import pytest

from plapsys.cli import (ConfigError, RunConfig, jsonable, load_schema, main, parse_config,
                         without_timing, write_csv)


def _run(tmp_path, command, config="", *extra, name="run"):
    out = tmp_path / name
    cfg = tmp_path / f"{name}.cfg"
    cfg.write_text(config)
    code = main([command, "--config", str(cfg), "--out", str(out), *extra])
    report = json.loads((out / "report.json").read_text()) if (out / "report.json").exists() else None
    return code, report, out


def _validate(report):
    jsonschema.validate(report, load_schema(report))


def _read_csv(path):
    raw = path.read_bytes()
    assert b"\r\n" in raw
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


class TestConfig:
    def test_defaults_are_the_example(self):
        cfg = parse_config("")
        assert (cfg.alpha, cfg.beta, cfg.gamma, cfg.q1, cfg.p1) == (2.0, 1.0, 1.5, 1.0, 2.0)
        assert cfg.k == (1.0, 1.0) and cfg.d == (-1.0, -1.0)

    def test_parse_with_comments_and_overrides(self):
        cfg = parse_config("mesh.n = 40  # coarse\nexample.alpha: 3\nsolver.eps0 = auto\n",
                           {"run.seed": 5})
        assert cfg.mesh_n == 40 and cfg.alpha == 3.0 and cfg.eps0 is None and cfg.seed == 5

    @pytest.mark.parametrize("text, key", [
        ("mesh.nn = 4", "mesh.nn"),
        ("mesh.n = four", "mesh.n"),
        ("problem.p1 = 1.0", "problem.p1"),
        ("problem.d2 = 0.5", "problem.d2"),
        ("mesh.kind = cube", "mesh.kind"),
        ("nonlinearity.kind = expression", "expression.potential"),
        ("solver.shrink = 1.5", "solver.shrink"),
    ])
    def test_errors_name_the_key(self, text, key):
        with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
            parse_config(text)

    def test_round_trip(self):
        cfg = RunConfig(mesh_n=7, alpha=2.5)
        text = "\n".join(f"{k} = {'' if v is None else v}" for k, v in cfg.to_dict().items())
        assert parse_config(text) == cfg


class TestOutputHelpers:
    def test_jsonable(self):
        out = jsonable({"a": np.float64(1.5), "b": np.array([1, 2]), "c": (np.inf, np.bool_(True))})
        assert out == {"a": 1.5, "b": [1, 2], "c": [None, True]}

    def test_csv_full_precision(self, tmp_path):
        x = 0.1 + 0.2
        write_csv(tmp_path / "t.csv", ["i", "v"], [np.arange(2), np.array([x, 1 / 3])])
        rows = _read_csv(tmp_path / "t.csv")
        assert rows[0] == ["i", "v"] and rows[1][0] == "0"
        assert float(rows[1][1]) == x and float(rows[2][1]) == 1 / 3

    def test_without_timing(self):
        rep = {"wall_time": 1, "a": {"wall_time_path": 2, "b": [{"wall_time": 3, "c": 4}]}}
        assert without_timing(rep) == {"a": {"b": [{"c": 4}]}}


class TestCommands:
    def test_eigen(self, tmp_path):
        code, rep, out = _run(tmp_path, "eigen", "mesh.n = 200\n")
        assert code == 0
        _validate(rep)
        entry = rep["eigenpairs"][0]
        assert abs(entry["lambda1"] - math.tanh(0.5)) < 1e-3
        assert abs(entry["lambda2"] - 1 / math.tanh(0.5)) < 5e-3
        rows = _read_csv(out / "eigenfunctions.csv")
        assert rows[0] == ["node", "x", "u1_p2"] and len(rows) == 202
        rows = _read_csv(out / "path_energy.csv")
        assert rows[0] == ["index", "rayleigh_p2"] and len(rows) == 34

    def test_malformed_key_exit_code(self, tmp_path, capsys):
        code, rep, _ = _run(tmp_path, "eigen", "mesh.nn = 200\n")
        assert code == 2 and rep is None
        assert "mesh.nn" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path):
        assert main(["eigen", "--config", str(tmp_path / "nope.cfg")]) == 2

    def test_hypotheses_pass(self, tmp_path):
        code, rep, _ = _run(tmp_path, "check-hypotheses", "mesh.n = 50\n")
        assert code == 0 and rep["hypotheses"]["verdict"] == "pass"
        _validate(rep)

    def test_hypotheses_fail_prints_witness(self, tmp_path, capsys):
        code, rep, _ = _run(tmp_path, "check-hypotheses", "mesh.n = 50\nexample.alpha = 1\n")
        assert code == 1 and rep["status"] == "hypothesis_failure"
        assert "H1: fail, witness" in capsys.readouterr().err
        _validate(rep)

    def test_origin_not_zero_fails_h0(self, tmp_path):
        code, rep, _ = _run(tmp_path, "check-hypotheses",
                            "mesh.n = 20\nnonlinearity.kind = expression\n"
                            "expression.potential = s1^2 + 1\n")
        assert code == 1
        assert rep["hypotheses"]["checks"]["H0"]["verdict"] == "fail"

    def test_three_solutions_aborts_below_threshold(self, tmp_path, capsys):
        code, rep, _ = _run(tmp_path, "three-solutions", "example.alpha = 1\n")
        assert code == 1 and rep["status"] == "error"
        assert rep["diagnostic"]["stage"] == "hypotheses"
        assert "witness" in capsys.readouterr().err
        _validate(rep)

    def test_solver_failure_exit_code(self, tmp_path):
        code, rep, _ = _run(tmp_path, "extremal", "mesh.n = 40\nsolver.ladder_max = 1\n")
        assert code == 4 and rep["diagnostic"]["error"] == "ConvergenceError"
        _validate(rep)

    def test_extremal(self, tmp_path):
        code, rep, out = _run(tmp_path, "extremal", "mesh.n = 40\n")
        assert code == 0
        _validate(rep)
        assert min(rep["positive"]["u1"]) > 0 and max(rep["negative"]["u2"]) < 0
        assert _read_csv(out / "solutions.csv")[0][-1] == "negative_u2"

    def test_gradcheck(self, tmp_path, capsys):
        code, rep, _ = _run(tmp_path, "gradcheck", "mesh.n = 20\ngradcheck.samples = 200\n")
        assert code == 0
        _validate(rep)
        errs = rep["max_relative_error"]
        assert errs["potential"] < 1e-6
        assert max(errs.values()) < 1e-5
        assert "energy_plus: max relative error" in capsys.readouterr().out

    def test_gradcheck_zero_spec_exact(self, tmp_path):
        code, rep, _ = _run(tmp_path, "gradcheck", "mesh.n = 10\ngradcheck.samples = 50\n"
                                                   "nonlinearity.kind = zero\n")
        assert code == 0
        errs = rep["max_relative_error"]
        assert all(errs[k] == 0.0 for k in ("potential", "truncated_plus", "truncated_minus",
                                            "truncated_zero"))

    def test_square_mesh(self, tmp_path):
        code, rep, _ = _run(tmp_path, "eigen", "mesh.kind = square\nmesh.n = 6\n"
                                              "eigen.path_nodes = 9\n")
        assert code == 0
        assert rep["eigenpairs"][0]["lambda1"] > 0


@pytest.fixture(scope="module")
def three_run(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("three")
    return _run(tmp, "three-solutions", "mesh.n = 100\n")


class TestThreeSolutions:
    def test_report(self, three_run):
        code, rep, _ = three_run
        assert code == 0
        _validate(rep)
        sols = rep["solutions"]
        assert sols["third"]["energy"] < 0
        assert sols["third"]["energy"] > max(sols["positive"]["energy"], sols["negative"]["energy"])
        for comp in ("u1", "u2"):
            assert rep["ordering_margins"][comp]["lower"] >= -1e-8
            assert rep["ordering_margins"][comp]["upper"] >= -1e-8

    def test_csv_outputs(self, three_run):
        _, rep, out = three_run
        head = _read_csv(out / "solutions.csv")[0]
        assert head == ["node", "x", "positive_u1", "positive_u2", "negative_u1", "negative_u2",
                        "third_u1", "third_u2"]
        rows = _read_csv(out / "path_energy.csv")
        assert rows[0] == ["index", "energy"]
        assert max(float(r[1]) for r in rows[1:]) == pytest.approx(rep["mountain_pass_value"])

    def test_thread_cap(self, tmp_path, three_run, monkeypatch):
        monkeypatch.setenv("SOLVER_THREADS", "1")
        code, rep, _ = _run(tmp_path, "three-solutions", "mesh.n = 100\n", name="capped")
        assert code == 0
        first = without_timing(three_run[1])
        for r in (rep, first):
            r["config"].pop("run.out")
        assert without_timing(rep) == first

    def test_thread_cap_must_be_integer(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SOLVER_THREADS", "many")
        code, _, _ = _run(tmp_path, "eigen", "mesh.n = 10\n")
        assert code == 2
