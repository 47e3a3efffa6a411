"""Mode and method dispatch shared by the command line and the tests."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace

from .benders import LINEAR, SOCP, RunConfig
from .benders import run as run_benders
from .extensive import solve_extensive
from .formulation import CHANCE, STOCHASTIC
from .network import Instance, equiprobable, generate_scenarios
from .report import STATUS_ERROR, RunReport, error_report

DETERMINISTIC = "deterministic"
MODES = (DETERMINISTIC, STOCHASTIC, CHANCE)
EXTENSIVE = "extensive"
BENDERS = "benders"
BENDERS_LINEAR = "benders-linear"
METHODS = (EXTENSIVE, BENDERS, BENDERS_LINEAR)
COMPARE_METHODS = ("extensive", "benders-linear", "benders-socp", "benders-cc")
DEFAULT_LOAD_LEVEL = 1.5
SCENARIO_RANGE = (0.6, 1.8)


class OptionError(ValueError):
    """Inconsistent run options."""


@dataclass(frozen=True)
class SolveOptions:
    mode: str = STOCHASTIC
    method: str = BENDERS
    epsilon: float = 0.0
    rho: float = 1.0
    tolerance: float = 1e-3
    max_iters: int = 50
    time_limit: float = math.inf
    scenarios: int | None = None  # replace the instance's scenarios by this many generated ones
    seed: int = 0
    jobs: int = 1
    load_level: float = DEFAULT_LOAD_LEVEL  # deterministic mode

    def validate(self):
        if self.mode not in MODES:
            raise OptionError(f"unknown mode {self.mode!r}")
        if self.method not in METHODS:
            raise OptionError(f"unknown method {self.method!r}")
        if self.epsilon != 0 and self.mode != CHANCE:
            raise OptionError("epsilon requires --mode chance")
        if not 0 <= self.epsilon < 1:
            raise OptionError("epsilon must lie in [0, 1)")
        if not self.rho > 0:
            raise OptionError("rho must be positive")
        if not self.tolerance > 0:
            raise OptionError("tolerance must be positive")
        if self.scenarios is not None and self.scenarios < 1:
            raise OptionError("scenarios must be >= 1")
        if not self.load_level > 0:
            raise OptionError("load level must be positive")
        if self.jobs < 1 or self.max_iters < 1:
            raise OptionError("jobs and max-iters must be >= 1")
        if not self.time_limit > 0:
            raise OptionError("time limit must be positive")
        return self


def prepare_instance(inst: Instance, opts: SolveOptions) -> Instance:
    """Apply scenario overrides: generated scenarios, or the single deterministic case."""
    if opts.mode == DETERMINISTIC:
        return inst.with_scenarios(equiprobable([opts.load_level]))
    if opts.scenarios is not None:
        return inst.with_scenarios(generate_scenarios(opts.scenarios, *SCENARIO_RANGE, opts.seed))
    return inst


def solve(inst: Instance, opts: SolveOptions) -> RunReport:
    """Run one mode/method combination; raises on invalid options or solver failure."""
    opts.validate()
    work = prepare_instance(inst, opts)
    mode = STOCHASTIC if opts.mode == DETERMINISTIC else opts.mode
    if opts.method == EXTENSIVE:
        report = solve_extensive(work, mode, opts.epsilon, opts.rho, opts.tolerance,
                                 time_limit=opts.time_limit).report
    else:
        config = RunConfig(
            mode=mode, epsilon=opts.epsilon, rho=opts.rho, tolerance=opts.tolerance, max_iters=opts.max_iters,
            time_limit=opts.time_limit, jobs=opts.jobs, seed=opts.seed,
            subproblem=LINEAR if opts.method == BENDERS_LINEAR else SOCP,
        )
        report = run_benders(config, work)
    report.mode = opts.mode
    return report


def solve_or_error(inst: Instance, opts: SolveOptions) -> RunReport:
    """Like ``solve`` but failures become an error report."""
    try:
        return solve(inst, opts)
    except Exception as exc:  # noqa: BLE001 - every failure is reported in-table
        return error_report(opts.mode, opts.method, opts.epsilon, opts.rho, opts.tolerance,
                            f"{type(exc).__name__}: {exc}")


def compare(inst: Instance, opts: SolveOptions) -> dict:
    """Run the four comparison methods on the same instance.

    The first three use ``opts.mode``; the chance row always runs chance
    mode with ``opts.epsilon``.  Failures are recorded, not raised.
    """
    opts.validate()
    plans = {
        "extensive": replace(opts, method=EXTENSIVE),
        "benders-linear": replace(opts, method=BENDERS_LINEAR),
        "benders-socp": replace(opts, method=BENDERS),
        "benders-cc": replace(opts, method=BENDERS, mode=CHANCE),
    }
    if opts.mode == DETERMINISTIC:
        # one scenario at the deterministic load level for every row
        inst = prepare_instance(inst, opts)
        plans = {k: replace(v, mode=CHANCE if k == "benders-cc" else STOCHASTIC, scenarios=None)
                 for k, v in plans.items()}
    reports = {}
    for name, o in plans.items():
        t0 = time.perf_counter()
        rep = solve_or_error(inst, o)
        rep.method = name
        if rep.status == STATUS_ERROR:
            rep.timings = {"wall": time.perf_counter() - t0}
        reports[name] = rep
    return reports
