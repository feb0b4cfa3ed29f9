import time

import numpy as np
import pytest

from plapsys.mesh import build_interval_mesh, build_square_mesh
from plapsys.nonlinearity import ExampleParams, example_family
from plapsys.solvers import maximal_negative_solution, minimal_positive_solution, three_solutions
from plapsys.steklov import first_eigenpair, second_eigenvalue_minimax


@pytest.fixture(scope="session")
def example_spec():
    return example_family(ExampleParams())


@pytest.fixture(scope="session")
def unit_example_spec():
    # alpha = beta = gamma = 1, p = 2, q = 1: the parameter set used for hand substitutions
    return example_family(ExampleParams(alpha=1.0, beta=1.0, gamma=1.0))


@pytest.fixture(scope="session")
def interval100():
    return build_interval_mesh(100)


@pytest.fixture(scope="session")
def interval200():
    return build_interval_mesh(200)


@pytest.fixture(scope="session")
def square8():
    return build_square_mesh(8)


@pytest.fixture(scope="session")
def eig200(interval200):
    first = first_eigenpair(interval200, 2.0)
    lam2, path = second_eigenvalue_minimax(interval200, 2.0, first)
    return first, lam2, path


@pytest.fixture(scope="session")
def extremals100(interval100, example_spec):
    e = first_eigenpair(interval100, 2.0)
    pos, rep_pos = minimal_positive_solution(interval100, example_spec, (e, e))
    neg, rep_neg = maximal_negative_solution(interval100, example_spec, (e, e))
    return e, pos, neg, rep_pos, rep_neg


@pytest.fixture(scope="session")
def pipeline100(interval100, example_spec):
    """Full three-solution run on the Example configuration with its wall time."""
    t0 = time.perf_counter()
    result = three_solutions(interval100, example_spec)
    return result, time.perf_counter() - t0


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Record one pass/fail line per acceptance criterion; printed in the terminal summary."""
    def record(number, title, ok, detail):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
