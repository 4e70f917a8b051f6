"""Convexity-constrained variational problems in the plane.

Two routes to the same minimizer: a direct convex program over discretely
convex grid functions, and a family of fourth-order Abreu-type equations
whose solutions approach it as ``eps -> 0``.
"""
from .geometry import (ConfigurationError, DiskDomain, DiskRegion, DomainPair, NodeLabel,
                       RectangleRegion, discretize, rho_eval)
from .fields import hessian_fd, gradient_fd, operators, read_snapshot, write_snapshot
from .convexity import (DirectionSet, NestedTriple, chord_envelope, is_discretely_convex,
                        lemma21_ratio, lower_convex_envelope, random_convex)
from .lagrangian import (AiryParams, LagrangianSpec, RochetChoneParams, assemble_f_eps,
                         check_assumptions, detect_C_phi, make_airy, make_quadratic_family,
                         make_rochet_chone)
from .functionals import J_eps_eval, J_eval, eta_eps, profit_phi
from .ma_solver import MASolveOptions, solve_linearized_ma, solve_ma_dirichlet
from .abreu_scheme import (EpsReport, SchemeParams, SchemeState, continuation_sweep,
                           solve_for_eps)
from .direct_minimizer import DirectOptions, solve_direct, uniqueness_probe

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError", "DiskDomain", "DiskRegion", "DomainPair", "NodeLabel",
    "RectangleRegion", "discretize", "rho_eval",
    "hessian_fd", "gradient_fd", "operators", "read_snapshot", "write_snapshot",
    "DirectionSet", "NestedTriple", "chord_envelope", "is_discretely_convex", "lemma21_ratio",
    "lower_convex_envelope", "random_convex",
    "AiryParams", "LagrangianSpec", "RochetChoneParams", "assemble_f_eps", "check_assumptions",
    "detect_C_phi", "make_airy", "make_quadratic_family", "make_rochet_chone",
    "J_eps_eval", "J_eval", "eta_eps", "profit_phi",
    "MASolveOptions", "solve_linearized_ma", "solve_ma_dirichlet",
    "EpsReport", "SchemeParams", "SchemeState", "continuation_sweep", "solve_for_eps",
    "DirectOptions", "solve_direct", "uniqueness_probe",
]
