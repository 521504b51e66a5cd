from .assembly import (
    apply_constraints,
    assemble_bilinear,
    assemble_gradient_form,
    assemble_load,
    assemble_mass,
    elasticity_tensor,
    laplace_tensor,
)
from .elements import quadrature, reference_element
from .solve import ConvergenceError, IndefiniteError, solve_spd, solve_symmetric
from .space import FeFunction, FeSpace, QuadData, TraceSpace, trace_on

__all__ = [
    "ConvergenceError",
    "IndefiniteError",
    "FeFunction",
    "FeSpace",
    "QuadData",
    "TraceSpace",
    "apply_constraints",
    "assemble_bilinear",
    "assemble_gradient_form",
    "assemble_load",
    "assemble_mass",
    "elasticity_tensor",
    "laplace_tensor",
    "quadrature",
    "reference_element",
    "solve_spd",
    "solve_symmetric",
    "trace_on",
]
