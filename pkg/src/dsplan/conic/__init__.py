"""Cone programming: container, interior-point solver, LP approximation, duals."""
from .cones import NONNEG, RSOC, SOC, ConeLayout
from .duals import (AffineCut, DualCheckError, DualSolution, affine_cut, extract_subproblem_duals, opposing_rows,
                    reduce_opposing)
from .ipm import (INFEASIBLE, ITERATION_LIMIT, NEAR_OPTIMAL, NUMERICAL_FAILURE, OPTIMAL, UNBOUNDED,
                  ConicSolution, solve)
from .polyhedral import PolyhedralProgram, levels_for_accuracy, polyhedral_approximation, tower_accuracy
from .program import ConicProgram, dump_program, parse_program, rotated_point_to_soc, rotated_to_soc

__all__ = [
    "NONNEG", "SOC", "RSOC", "ConeLayout", "ConicProgram", "ConicSolution", "DualSolution", "AffineCut",
    "DualCheckError", "PolyhedralProgram", "OPTIMAL", "INFEASIBLE", "UNBOUNDED", "ITERATION_LIMIT",
    "NUMERICAL_FAILURE", "NEAR_OPTIMAL", "solve", "rotated_to_soc", "rotated_point_to_soc", "polyhedral_approximation",
    "levels_for_accuracy", "tower_accuracy", "extract_subproblem_duals", "affine_cut", "dump_program",
    "parse_program", "opposing_rows", "reduce_opposing",
]
