"""Two-stage stochastic and chance-constrained distribution expansion planning.

Layers, bottom up: ``conic`` (interior-point cone solver), ``bnb``
(branch-and-bound), ``network`` (instance data), ``formulation`` (model
blocks), ``extensive`` and ``benders`` (solution methods), ``report`` and
``cli`` (outputs).
"""
from .benders import RunConfig
from .benders import run as run_benders
from .extensive import solve_extensive
from .formulation import build_all_recourse, build_extensive, build_first_stage, evaluate_plan
from .network import Instance, capital_recovery_factor, generate_scenarios, load_bundled, load_instance
from .pipeline import SolveOptions, compare, solve

__version__ = "0.1.0"

__all__ = [
    "Instance", "RunConfig", "SolveOptions", "build_all_recourse", "build_extensive", "build_first_stage",
    "capital_recovery_factor", "compare", "evaluate_plan", "generate_scenarios", "load_bundled", "load_instance",
    "run_benders", "solve", "solve_extensive",
]
