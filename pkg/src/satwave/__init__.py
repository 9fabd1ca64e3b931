"""Finite-element simulation of the wave equation under saturated Dirichlet
boundary velocity feedback, with tools to check its energy decay."""

__version__ = "0.1.0"

from .errors import (InvalidArgumentError, MeshDegeneracyError, NonconvergenceError,  # noqa: E402
                     NumericalConsistencyError, PreconditionError)
from .mesh import (GAMMA0, GAMMA1, Mesh, build_annulus_mesh, build_unit_square_mesh,  # noqa: E402
                   check_geometric_assumptions)
from .elliptic import DiscreteOperators, assemble_operators  # noqa: E402
from .feedback import (make_feedback, make_identity, make_saturation,  # noqa: E402
                       make_scaled_saturation, validate_assumptions)
from .stepper import (SolverConfig, State, Stepper, apply_generator, energy,  # noqa: E402
                      make_strong_data, solve_resolvent, theta_apply)

__all__ = [
    "GAMMA0", "GAMMA1", "Mesh", "build_annulus_mesh", "build_unit_square_mesh",
    "check_geometric_assumptions", "DiscreteOperators", "assemble_operators",
    "make_feedback", "make_identity", "make_saturation", "make_scaled_saturation",
    "validate_assumptions", "SolverConfig", "State", "Stepper", "apply_generator",
    "energy", "make_strong_data", "solve_resolvent", "theta_apply",
    "InvalidArgumentError", "MeshDegeneracyError", "NonconvergenceError",
    "NumericalConsistencyError", "PreconditionError",
]
