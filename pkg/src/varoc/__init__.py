"""Optimal control of affine-controlled second-order systems via variational
integrators on state-costate space."""

from .core import (ControlSystem, MetricSingularError, OCProblem, TerminalCost, check_derivatives,
                   eval_b, eval_grad_b, minimising_control)
from .diagnostics import AffineSymmetry, compute_diagnostics, convergence_study
from .kepler import KeplerParams, kepler_problem, kepler_system
from .residual import (DEPENDENT, INDEPENDENT, DiscreteTrajectory, ResidualVector, assemble_dep,
                       assemble_indep, recover_multipliers)
from .scheme import SchemeParams
from .solver import SolverConfig, SolveStats, initial_guess, newton_solve, solve

__version__ = "0.1.0"
