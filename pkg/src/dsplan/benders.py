"""Benders decomposition with scenario-gated optimality cuts.

The master owns the first-stage vector ``x``, one cost estimate ``eta_s``
per scenario and, in chance mode, one binary ``w_s`` marking scenario s as
dropped.  A cut from scenario s is only enforced when the scenario is kept::

    eta_s >= C_k(x) - C_hi,k * w_s,     eta_s >= 0,

where ``C_k`` is the affine minorant of the scenario's recourse value and
``C_hi,k`` an upper bound of ``C_k`` over the first-stage region.  This is the
exact linearization of ``eta_s >= C_k(x) (1 - w_s)`` for binary ``w_s``.
With ``epsilon = 0`` all indicators are fixed to zero and the loop is
classical multi-cut Benders.

Each iteration solves the master by branch-and-bound over LP relaxations,
solves every scenario's recourse blocks at the master's ``x`` (optionally
in parallel), re-optimizes the dropped set exactly at that ``x`` to get an
upper bound, and adds one aggregated cut per scenario.

Cuts taken exactly at a binary ``x`` are nearly vertical in the switch
columns (the conic recourse value has unbounded slope where a branch closes),
so the master can dodge them by changing topology.  By default a second cut
per scenario is taken at a point pulled toward an interior core point of the
first-stage relaxation; its slopes stay moderate and it carries information
across topologies.  The exact cut keeps the loop finitely convergent.
"""
from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .bnb import MIP_INFEASIBLE, MIP_OPTIMAL, OPTIMAL, MixedIntegerProgram, relax, solve_mip
from .conic import (NONNEG, ConicProgram, affine_cut, extract_subproblem_duals, opposing_rows,
                    polyhedral_approximation, reduce_opposing, solve)
from .formulation import (CHANCE, STOCHASTIC, ChanceBudgetError, FirstStage, RecourseFailure,
                          build_all_recourse, build_first_stage, recourse_cost_bound, recourse_floor)
from .network import Instance
from .report import STATUS_LIMIT, STATUS_OPTIMAL, RunReport, build_report, select_upper_bound

log = logging.getLogger(__name__)

SOCP = "socp"
LINEAR = "linear"
CUT_BOUND_INTERVAL = "interval"
CUT_BOUND_RECOURSE = "recourse"


class MasterInfeasible(RuntimeError):
    """The first-stage constraints admit no plan."""


@dataclass
class RunConfig:
    mode: str = STOCHASTIC
    epsilon: float = 0.0
    rho: float = 1.0
    tolerance: float = 1e-3
    max_iters: int = 50
    time_limit: float = math.inf
    jobs: int = 1
    seed: int = 0
    subproblem: str = SOCP  # or LINEAR: polyhedral recourse programs
    nu: float = 1e-3  # accuracy of the polyhedral cones
    cut_bound: str = CUT_BOUND_INTERVAL
    master_gap: float | None = None  # defaults to tolerance / 10
    strengthen: bool = True  # recourse floors in the master and coefficient tightening of cuts
    core_weight: float = 0.3  # extra cut per scenario toward the core point; 0 disables
    solver_tol: float = 1e-8

    def validate(self):
        if self.mode not in (STOCHASTIC, CHANCE):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.epsilon >= 1:
            raise ChanceBudgetError("chance budget empties scenario set")
        if self.mode == STOCHASTIC and self.epsilon != 0:
            raise ValueError("epsilon requires chance mode")
        if self.subproblem not in (SOCP, LINEAR):
            raise ValueError(f"unknown subproblem kind {self.subproblem!r}")
        if self.cut_bound not in (CUT_BOUND_INTERVAL, CUT_BOUND_RECOURSE):
            raise ValueError(f"unknown cut bound {self.cut_bound!r}")
        if not 0 <= self.core_weight < 1:
            raise ValueError("core_weight must lie in [0, 1)")
        if self.jobs < 1 or self.max_iters < 1:
            raise ValueError("jobs and max_iters must be >= 1")
        return self

    @property
    def weight(self) -> float:
        """Factor on the expected recourse cost in the objective."""
        return self.rho if self.mode == CHANCE else 1.0


@dataclass
class BendersCut:
    """``value(x) = constant + coef @ x``, a minorant of scenario s's recourse value."""
    scenario: int  # position in the scenario set
    iteration: int
    constant: float
    coef: np.ndarray
    c_hi: float  # upper bound of the affine expression over the first-stage region

    def value(self, x) -> float:
        return float(self.constant + self.coef @ np.asarray(x, float))

    def tightened(self, binary, floor: float) -> "BendersCut":
        """Raise negative binary coefficients to ``floor - c_hi``.

        Wherever such a column is 1 the raised cut stays below ``floor``, a
        known lower bound of the recourse value, so validity is kept at every
        binary point and the cut only gets stronger there.
        """
        if not math.isfinite(self.c_hi) or floor > self.c_hi:
            return self
        coef = self.coef.copy()
        mask = np.asarray(binary, bool) & (coef < floor - self.c_hi)
        coef[mask] = floor - self.c_hi
        return BendersCut(self.scenario, self.iteration, self.constant, coef, self.c_hi)


@dataclass
class MasterResult:
    x: np.ndarray
    w: np.ndarray
    eta: np.ndarray
    value: float  # valid lower bound (branch-and-bound bound)
    objective: float  # incumbent value of the master
    nodes: int
    status: str
    vector: np.ndarray  # full master column vector


@dataclass
class MasterState:
    pool: list = field(default_factory=list)
    lower: float = -math.inf
    upper: float = math.inf
    iteration: int = 0
    x: np.ndarray | None = None  # incumbent first-stage vector (defines the upper bound)
    w: np.ndarray | None = None  # master indicators at the incumbent
    w_bar: np.ndarray | None = None  # exact selection at the incumbent
    trace: list = field(default_factory=list)  # (iteration, LB, UB, J vector)
    master_values: list = field(default_factory=list)

    @property
    def gap(self) -> float:
        return relative_gap(self.upper, self.lower)


def relative_gap(upper, lower) -> float:
    """``|UB - LB| / |LB|``; infinite while either bound is missing."""
    if not (math.isfinite(upper) and math.isfinite(lower)):
        return math.inf
    if lower == 0:
        return 0.0 if upper == 0 else math.inf
    return abs(upper - lower) / abs(lower)


# -- master ----------------------------------------------------------------------

def value_scale(pool, floors=None) -> float:
    """Unit for the recourse columns so that cut rows have moderate coefficients."""
    mags = [1.0]
    if floors is not None and len(floors):
        mags.append(float(np.max(np.abs(floors))))
    mags += [abs(cut.constant) for cut in pool]
    return max(mags)


def master_program(pool, fs: FirstStage, probabilities, epsilon, rho, chance: bool, floors=None,
                   scale: float = 1.0):
    """Mixed-integer LP over ``[x, eta / scale, w]`` (``w`` only in chance mode).

    ``floors`` are optional lower bounds on each scenario's recourse value;
    in chance mode they are gated by the drop indicator like the cuts.
    Cut and floor rows are divided by ``scale`` as well.
    """
    nx = len(fs.index)
    S = len(probabilities)
    floors = np.zeros(S) if floors is None else np.asarray(floors, float)
    fl_s = floors / scale
    n = nx + S + (S if chance else 0)
    eta0, w0 = nx, nx + S
    weight = rho if chance else 1.0
    c = np.zeros(n)
    c[:nx] = fs.c
    c[eta0:eta0 + S] = weight * scale * np.asarray(probabilities)

    A = sp.hstack([fs.A, sp.csr_matrix((fs.A.shape[0], n - nx))]).tocsr()
    rows = [sp.hstack([fs.G, sp.csr_matrix((fs.G.shape[0], n - nx))]).tocsr()]
    h = [fs.h]
    if pool:
        coef = np.zeros((len(pool), n))
        rhs = np.zeros(len(pool))
        for r, cut in enumerate(pool):
            coef[r, :nx] = cut.coef / scale
            coef[r, eta0 + cut.scenario] = -1.0
            if chance:
                coef[r, w0 + cut.scenario] = -max(cut.c_hi, 0.0) / scale
            rhs[r] = -cut.constant / scale
        rows.append(sp.csr_matrix(coef))
        h.append(rhs)
    if chance and np.any(floors > 0):
        # eta_s >= L_s (1 - w_s)
        fl = np.zeros((S, n))
        fl[np.arange(S), eta0 + np.arange(S)] = -1.0
        fl[np.arange(S), w0 + np.arange(S)] = -fl_s
        rows.append(sp.csr_matrix(fl))
        h.append(-fl_s)
    if chance:
        bud = np.zeros((1, n))
        bud[0, w0:] = probabilities
        rows.append(sp.csr_matrix(bud))
        h.append(np.array([epsilon + 1e-9]))
    G = sp.vstack(rows).tocsr()
    prog = ConicProgram(c, A, fs.b, G, np.concatenate(h), ((NONNEG, G.shape[0]),))
    lb = np.concatenate([fs.lb, np.zeros(S) if chance else fl_s, np.zeros(n - nx - S)])
    ub = np.concatenate([fs.ub, np.full(S, np.inf), np.ones(n - nx - S)])
    if chance and epsilon == 0:
        ub[w0:] = 0.0
    integer = np.zeros(n, bool)
    integer[:nx] = fs.index.binary
    integer[w0:] = chance
    return MixedIntegerProgram(prog, lb, ub, integer)


def feasible_eta(pool, x, w, floors, S: int) -> np.ndarray:
    """Smallest recourse estimates satisfying every cut and floor at ``(x, w)``."""
    w = np.zeros(S) if w is None else np.asarray(w, float)
    floors = np.zeros(S) if floors is None else np.asarray(floors, float)
    eta = floors * (1.0 - w)
    for cut in pool:
        s = cut.scenario
        eta[s] = max(eta[s], cut.value(x) - max(cut.c_hi, 0.0) * w[s])
    return eta


def solve_master(pool, fs: FirstStage, probabilities, epsilon=0.0, rho=1.0, chance=False, incumbent=None,
                 rel_gap=1e-4, time_limit=math.inf, tol=1e-8, floors=None) -> MasterResult:
    """Optimal master plan for the current cut pool; ``value`` is a valid lower bound.

    ``incumbent`` is an optional ``[x, eta, w]`` vector; its recourse
    estimates are raised to the current cuts before it seeds the search.
    """
    nx, S = len(fs.index), len(probabilities)
    scale = value_scale(pool, floors)
    mip = master_program(pool, fs, probabilities, epsilon, rho, chance, floors, scale)
    start = None
    if incumbent is not None:
        start = np.array(incumbent, float)
        w_in = start[nx + S:] if chance else None
        start[nx:nx + S] = feasible_eta(pool, start[:nx], w_in, floors, S)
        start[nx:nx + S] /= scale
    res = solve_mip(mip, rel_gap=rel_gap, time_limit=time_limit, incumbent=start, tol=tol)
    if res.status == MIP_INFEASIBLE or res.x is None:
        raise MasterInfeasible("first-stage constraints are inconsistent")
    v = res.x.copy()
    v[nx:nx + S] *= scale
    w = np.round(v[nx + S:]) if chance else np.zeros(S)
    return MasterResult(v[:nx].copy(), w, v[nx:nx + S].copy(), res.bound, res.objective, res.nodes,
                        res.status, v)


# -- subproblems -----------------------------------------------------------------

@dataclass(eq=False)
class ScenarioOracle:
    """Recourse blocks of one scenario, optionally with polyhedral stand-ins."""
    scenario: int
    blocks: list
    polyhedral: list | None = None
    reduce: bool = True  # strip opposing-row multiplier pairs before forming cuts

    def __post_init__(self):
        self.pairs = [opposing_rows(b.program.G, range(b.program.cones[0][1])) for b in self.blocks]

    def solve(self, x, iteration, lb, ub, cap=math.inf, tol=1e-8):
        """``(J_s, cut)`` at ``x``; the cut is tight at ``x`` up to solver accuracy."""
        x = np.asarray(x, float)
        J = 0.0
        constant = 0.0
        coef = np.zeros(len(x))
        for k, blk in enumerate(self.blocks):
            d = blk.d0 - blk.Ta @ x
            e = blk.h0 - blk.Tg @ x
            if self.polyhedral is None:
                prog = blk.program_at(x)
                sol = solve(prog, tol=tol)
                if not sol.usable:
                    raise RecourseFailure(f"scenario position {self.scenario}, block {blk.block}: {sol.status}")
                extract_subproblem_duals(sol, blk, tol=1e-5, program=prog)
                y, z = sol.y, sol.z
            else:
                poly = self.polyhedral[k]
                sol = solve(poly.with_rhs(d, e), tol=tol)
                if not sol.usable:
                    raise RecourseFailure(
                        f"scenario position {self.scenario}, block {blk.block} (polyhedral): {sol.status}")
                y, z = poly.pull_back(sol.y, sol.z)
            if self.reduce:
                z = reduce_opposing(z, self.pairs[k])
            cut = affine_cut(y, z, blk.d0, blk.h0, blk.Ta, blk.Tg)
            J += sol.primal_objective
            constant += cut.constant
            coef += cut.coef
        lo_hi = _interval_high(constant, coef, lb, ub)
        return J, BendersCut(self.scenario, iteration, constant, coef, min(lo_hi, cap))


def _interval_high(constant, coef, lb, ub) -> float:
    return float(constant + np.sum(np.where(coef > 0, coef * ub, coef * lb)))


def relaxation_floor(fs: FirstStage, oracle: ScenarioOracle, tol=1e-8) -> float:
    """Smallest recourse value of one scenario over the first-stage relaxation.

    A valid floor for whatever recourse model the oracle solves (conic or
    polyhedral): each block is minimized jointly with a relaxed first-stage
    vector.  Returns 0 when a block cannot be resolved, which is valid as
    long as recourse costs are nonnegative.
    """
    nx = len(fs.c)
    lb, ub = fs.lb, fs.ub
    up, lo = np.flatnonzero(np.isfinite(ub)), np.flatnonzero(np.isfinite(lb))
    box = sp.vstack([sp.csr_matrix((np.ones(len(up)), (np.arange(len(up)), up)), shape=(len(up), nx)),
                     sp.csr_matrix((-np.ones(len(lo)), (np.arange(len(lo)), lo)), shape=(len(lo), nx))])
    total = 0.0
    for k, blk in enumerate(oracle.blocks):
        if oracle.polyhedral is None:
            prog = blk.program
            b0, h0, Tb, Th = blk.d0, blk.h0, blk.Ta, blk.Tg
        else:
            poly = oracle.polyhedral[k]
            prog = poly.program
            b0 = poly.Bb @ blk.d0 + poly.Bh @ blk.h0
            h0 = poly.Hb @ blk.d0 + poly.Hh @ blk.h0
            Tb = poly.Bb @ blk.Ta + poly.Bh @ blk.Tg
            Th = poly.Hb @ blk.Ta + poly.Hh @ blk.Tg
        ny = prog.n
        A = sp.vstack([sp.hstack([fs.A, sp.csr_matrix((fs.A.shape[0], ny))]),
                       sp.hstack([sp.csr_matrix(Tb), prog.A])]).tocsr()
        G = sp.vstack([sp.hstack([sp.vstack([box, fs.G]), sp.csr_matrix((box.shape[0] + fs.G.shape[0], ny))]),
                       sp.hstack([sp.csr_matrix(Th), prog.G])]).tocsr()
        h = np.concatenate([ub[up], -lb[lo], fs.h, h0])
        cones = ((NONNEG, box.shape[0] + fs.G.shape[0]),) + tuple(prog.cones)
        joint = ConicProgram(np.concatenate([np.zeros(nx), prog.c]), A, np.concatenate([fs.b, b0]), G, h, cones)
        sol = solve(joint, tol=tol)
        if not sol.usable:
            log.warning("floor of scenario position %d, block %d unresolved (%s); using 0",
                        oracle.scenario, blk.block, sol.status)
            continue
        total += max(sol.dual_objective, 0.0)
    return total


def solve_subproblem(oracle: ScenarioOracle, x, iteration=0, lb=None, ub=None, tol=1e-8):
    """Recourse optimum of one scenario at ``x`` and its aggregated cut."""
    x = np.asarray(x, float)
    lb = np.zeros_like(x) if lb is None else lb
    ub = np.ones_like(x) if ub is None else ub
    return oracle.solve(x, iteration, lb, ub, tol=tol)


def build_oracles(inst: Instance, fs: FirstStage, blocks=None, linear=False, nu=1e-3):
    blocks = blocks or build_all_recourse(inst, fs.index)
    out = []
    for s, row in enumerate(blocks):
        poly = [polyhedral_approximation(b.program, nu) for b in row] if linear else None
        out.append(ScenarioOracle(s, list(row), poly))
    return out


# -- main loop -------------------------------------------------------------------

CORE_BOX = 1e3  # cap on unbounded first-stage columns when centring


def core_point(fs: FirstStage) -> np.ndarray:
    """Interior point of the first-stage relaxation (zero-objective interior-point solve)."""
    n = len(fs.c)
    ub = np.minimum(fs.ub, CORE_BOX)
    prog = ConicProgram(np.zeros(n), fs.A, fs.b, fs.G, fs.h, ((NONNEG, fs.G.shape[0]),))
    res = relax(MixedIntegerProgram(prog, fs.lb, ub, np.zeros(n, bool)), fs.lb, ub)
    if res.status != OPTIMAL:
        raise MasterInfeasible("first-stage constraints are inconsistent")
    return np.clip(res.x, fs.lb, ub)


def _round_plan(x, fs: FirstStage):
    idx = fs.index
    return np.where(idx.binary, np.round(x), np.clip(x, idx.lb, idx.ub))


def run_with_state(config: RunConfig, inst: Instance, fs: FirstStage | None = None, blocks=None):
    """Run the decomposition; returns ``(report, state)``."""
    config.validate()
    start = time.perf_counter()
    fs = fs or build_first_stage(inst)
    blocks = blocks or build_all_recourse(inst, fs.index)
    linear = config.subproblem == LINEAR
    oracles = build_oracles(inst, fs, blocks, linear, config.nu)
    probs = inst.scenarios.probabilities
    S = len(probs)
    chance = config.mode == CHANCE
    caps = [recourse_cost_bound(inst, s) if config.cut_bound == CUT_BOUND_RECOURSE else math.inf
            for s in range(S)]
    if not config.strengthen:
        floors = np.zeros(S)
    elif linear:
        # the polyhedral recourse may dip below the conic floor, so bound it directly
        floors = np.array([relaxation_floor(fs, o, config.solver_tol) for o in oracles])
    else:
        floors = np.array([recourse_floor(inst, s) for s in range(S)])
    master_gap = config.master_gap if config.master_gap is not None else config.tolerance / 10
    x_core = core_point(fs) if config.core_weight > 0 else None
    state = MasterState()
    stats = {"master_nodes": 0, "subproblem_solves": 0, "cuts": 0}
    t_master = t_sub = 0.0
    warm = None
    status = STATUS_LIMIT
    pool_exec = ThreadPoolExecutor(max_workers=config.jobs) if config.jobs > 1 else None
    try:
        for it in range(1, config.max_iters + 1):
            remaining = config.time_limit - (time.perf_counter() - start)
            if remaining <= 0:
                break
            t0 = time.perf_counter()
            m = solve_master(state.pool, fs, probs, config.epsilon, config.rho, chance, warm,
                             rel_gap=master_gap, time_limit=remaining, tol=config.solver_tol, floors=floors)
            t_master += time.perf_counter() - t0
            stats["master_nodes"] += m.nodes
            state.master_values.append(m.value)
            state.lower = max(state.lower, m.value)
            state.iteration = it
            x_hat = _round_plan(m.x, fs)
            warm = m.vector

            t0 = time.perf_counter()

            def job(o, x=x_hat, it=it):
                J_s, cut = o.solve(x, it, fs.lb, fs.ub, caps[o.scenario], config.solver_tol)
                if x_core is None:
                    return J_s, [cut]
                x_mix = (1 - config.core_weight) * x + config.core_weight * x_core
                core_cut = o.solve(x_mix, it, fs.lb, fs.ub, caps[o.scenario], config.solver_tol)[1]
                return J_s, [cut, core_cut]

            results = list(pool_exec.map(job, oracles)) if pool_exec else [job(o) for o in oracles]
            t_sub += time.perf_counter() - t0
            stats["subproblem_solves"] += sum(len(o.blocks) for o in oracles) * (1 if x_core is None else 2)
            J = np.array([r[0] for r in results])
            j_bar, w_bar = select_upper_bound(J, probs, config.epsilon) if chance else (float(probs @ J), np.zeros(S))
            upper = float(fs.c @ x_hat) + config.weight * j_bar
            if upper < state.upper:
                state.upper, state.x, state.w, state.w_bar = upper, x_hat, m.w, w_bar
            cuts = [c for r in results for c in r[1]]
            if config.strengthen:
                cuts = [c.tightened(fs.index.binary, floors[c.scenario]) for c in cuts]
            state.pool.extend(cuts)
            stats["cuts"] = len(state.pool)
            state.trace.append((it, state.lower, state.upper, J))
            log.info("iteration %d: LB %.10g UB %.10g gap %.3e master nodes %d", it, state.lower, state.upper,
                     state.gap, m.nodes)
            if state.gap <= config.tolerance:
                status = STATUS_OPTIMAL
                break
    finally:
        if pool_exec:
            pool_exec.shutdown()

    trace = [{"iteration": it, "lower": lo, "upper": up} for it, lo, up, _ in state.trace]
    method = "benders-linear" if linear else "benders"
    stats["iterations"] = state.iteration
    stats["model_lower"] = state.lower
    stats["model_upper"] = state.upper
    if state.x is None:
        raise RuntimeError("no iteration completed within the time limit")
    report = build_report(
        inst, fs, blocks, state.x, mode=config.mode, method=method, epsilon=config.epsilon, rho=config.rho,
        tolerance=config.tolerance, status=status, bound_trace=trace, iterations=state.iteration,
        gap=state.gap, master_w=state.w, stats=stats,
        timings={"wall": time.perf_counter() - start, "master": t_master, "subproblems": t_sub},
    )
    return report, state


def run(config: RunConfig, inst: Instance) -> RunReport:
    return run_with_state(config, inst)[0]
