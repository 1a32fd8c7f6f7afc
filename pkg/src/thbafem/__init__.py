"""Adaptive THB-spline finite elements for the clamped biharmonic problem."""
from .splines import KnotVector, TwoScaleRow, bspline_eval, clamped, tensor_eval, two_scale
from .mesh import (ConfigurationError, Edge, EdgeSet, HierPartition, LevelCapError, LevelCell,
                   auxiliary_domain, cell_neighborhood, edges, initial_partition, is_admissible,
                   mesh_refine, overlay, recursive_refine, support_extension, uniform_partition)
from .basis import (SplineField, ThbBasis, ThbFunction, build_basis, field_eval, hb_select,
                    quasi_interpolate, thb_eval, truncate_all)
from .solver import (ConstrainedSpace, LinearSystem, SolverError, assemble, constrain_space,
                     energy_norm_error, galerkin_solve, solve)
from .estimator import (IndicatorMap, edge_jump_terms, estimate, indicator, interior_residual,
                        oscillation, total_error)
from .marking import MarkingResult, dorfler_mark
from .problems import ProblemSpec, make_problem
from .afem import (IterationRecord, contraction_diagnostic, rate_estimate, run_afem, run_uniform,
                   threshold_refine)

__version__ = "0.1.0"

__all__ = [
    "KnotVector",
    "TwoScaleRow",
    "bspline_eval",
    "clamped",
    "tensor_eval",
    "two_scale",
    "ConfigurationError",
    "Edge",
    "EdgeSet",
    "HierPartition",
    "LevelCapError",
    "LevelCell",
    "auxiliary_domain",
    "cell_neighborhood",
    "edges",
    "initial_partition",
    "is_admissible",
    "mesh_refine",
    "overlay",
    "recursive_refine",
    "support_extension",
    "uniform_partition",
    "SplineField",
    "ThbBasis",
    "ThbFunction",
    "build_basis",
    "field_eval",
    "hb_select",
    "quasi_interpolate",
    "thb_eval",
    "truncate_all",
    "ConstrainedSpace",
    "LinearSystem",
    "SolverError",
    "assemble",
    "constrain_space",
    "energy_norm_error",
    "galerkin_solve",
    "solve",
    "IndicatorMap",
    "edge_jump_terms",
    "estimate",
    "indicator",
    "interior_residual",
    "oscillation",
    "total_error",
    "MarkingResult",
    "dorfler_mark",
    "ProblemSpec",
    "make_problem",
    "IterationRecord",
    "contraction_diagnostic",
    "rate_estimate",
    "run_afem",
    "run_uniform",
    "threshold_refine",
]
