"""Finite element solvers for coupled p-Laplacian systems with nonlinear boundary flux."""

__version__ = "0.1.0"

from .errors import (ConvergenceError, DegenerateGeometryError, DegenerateInputError,
                     InvalidArgumentError, NumericalDegeneracyError, NumericOverflowError,
                     PlapsysError, PreconditionError)
from .mesh import (FeField, Mesh, SystemState, apply_p_operator, build_interval_mesh, build_mesh,
                   build_square_mesh, integrate_boundary, integrate_interior, p_energy)
from .nonlinearity import (EigenLevels, ExampleParams, HypothesisReport, NonlinearitySpec,
                           check_hypotheses, eval_gradient, eval_hessian, eval_potential,
                           example_family, expression_spec, zero_spec)
from .solvers import (SolverOptions, SolverReport, ThreeSolutionResult, TrappingRegion,
                      build_negative_path, maximal_negative_solution, minimal_positive_solution,
                      minimize_energy, mountain_pass, residual_norm, scalar_extremal,
                      solve_in_trapping_region, three_solutions)
from .steklov import (EigenOptions, PathOptions, SteklovEigenpair, first_eigenpair,
                      rayleigh_quotient, second_eigenvalue_minimax)
from .truncation import (Bounds, EnergyContext, TruncationKind, energy, energy_subgradient,
                         project_box, truncated_gradient_selection, truncated_potential)

__all__ = [name for name in dir() if not name.startswith("_")]
