"""Extensive-form solve: the monolithic mixed-integer cone program by branch-and-bound."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .bnb import MIP_INFEASIBLE, MIP_NO_INCUMBENT, MIP_OPTIMAL, Incumbent, MixedIntegerProgram, solve_mip
from .formulation import STOCHASTIC, FirstStage, build_all_recourse, build_extensive, build_first_stage
from .network import Instance
from .report import STATUS_LIMIT, STATUS_OPTIMAL, RunReport, build_report


class ExtensiveFailure(RuntimeError):
    """No integer-feasible plan was found."""


@dataclass
class ExtensiveResult:
    report: RunReport
    search: Incumbent


def solve_extensive(inst: Instance, mode: str = STOCHASTIC, epsilon: float = 0.0, rho: float = 1.0,
                    tolerance: float = 1e-3, time_limit: float = math.inf, node_limit: int = 100000,
                    big_m: float | None = None, fs: FirstStage | None = None, blocks=None,
                    rel_gap: float | None = None) -> ExtensiveResult:
    """Branch-and-bound over conic relaxations of the extensive form.

    ``rel_gap`` defaults to ``tolerance / 10`` so that the search is proven
    well inside the reporting tolerance.  The reported objective is the
    exact evaluation of the incumbent's first-stage plan.
    """
    start = time.perf_counter()
    fs = fs or build_first_stage(inst)
    blocks = blocks or build_all_recourse(inst, fs.index)
    model = build_extensive(inst, mode, epsilon, rho, big_m, fs, blocks)
    mip = MixedIntegerProgram(model.program, model.lb, model.ub, model.integer)
    gap = tolerance / 10 if rel_gap is None else rel_gap
    res = solve_mip(mip, rel_gap=gap, node_limit=node_limit, time_limit=time_limit)
    if res.status == MIP_INFEASIBLE:
        raise ExtensiveFailure("extensive form is infeasible")
    if res.status == MIP_NO_INCUMBENT or res.x is None:
        raise ExtensiveFailure(f"no integer-feasible plan within limits (bound {res.bound:.10g})")
    status = STATUS_OPTIMAL if res.status == MIP_OPTIMAL else STATUS_LIMIT
    x = res.x[:model.n_first]
    w = np.round(res.x[model.w]) if len(model.w) else None
    trace = [{"iteration": res.nodes, "lower": res.bound, "upper": res.objective}]
    stats = {"nodes": res.nodes, "relaxations": res.solves, "model_lower": res.bound,
             "model_upper": res.objective, "columns": model.program.n, "rows": model.program.m}
    report = build_report(
        inst, fs, blocks, x, mode=mode, method="extensive", epsilon=epsilon, rho=rho, tolerance=tolerance,
        status=status, bound_trace=trace, iterations=res.nodes, gap=res.gap, master_w=w, stats=stats,
        timings={"wall": time.perf_counter() - start, "search": res.elapsed},
    )
    return ExtensiveResult(report, res)
