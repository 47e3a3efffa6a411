"""Best-bound branch-and-bound over continuous cone relaxations.

Every node is described by bound overrides on the integer columns.  Its
relaxation substitutes fixed columns out of the program, turns remaining
finite bounds into orthant rows, and is handed to a pluggable node solver
(the interior-point core by default).  Branching picks the most fractional
column, lowest index first.
"""
from __future__ import annotations

import heapq
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .conic import INFEASIBLE, NONNEG, OPTIMAL, ConicProgram
from .conic import solve as conic_solve

log = logging.getLogger(__name__)

INT_TOL = 1e-6
FEAS_TOL = 1e-7

MIP_OPTIMAL = "optimal"
MIP_LIMIT = "limit"
MIP_INFEASIBLE = "infeasible"
MIP_NO_INCUMBENT = "no-incumbent"


@dataclass(eq=False)
class MixedIntegerProgram:
    """A cone program with column bounds and a set of binary columns."""
    program: ConicProgram
    lb: np.ndarray
    ub: np.ndarray
    integer: np.ndarray  # boolean mask

    def __post_init__(self):
        n = self.program.n
        self.lb = np.asarray(self.lb, float).copy()
        self.ub = np.asarray(self.ub, float).copy()
        self.integer = np.asarray(self.integer, bool).copy()
        if self.lb.shape != (n,) or self.ub.shape != (n,) or self.integer.shape != (n,):
            raise ValueError("bounds and integer mask must match the number of columns")
        if np.any(self.lb > self.ub):
            raise ValueError("lower bound above upper bound")
        if not (np.all(np.isfinite(self.lb[self.integer])) and np.all(np.isfinite(self.ub[self.integer]))):
            raise ValueError("integer columns need finite bounds")


@dataclass
class SearchNode:
    id: int
    parent: int
    depth: int
    lb: np.ndarray
    ub: np.ndarray
    bound: float  # parent's relaxation value until solved


@dataclass
class Incumbent:
    status: str
    x: np.ndarray | None
    objective: float
    bound: float
    nodes: int
    solves: int
    log: list = field(default_factory=list, repr=False)
    bound_trace: list = field(default_factory=list, repr=False)
    elapsed: float = 0.0

    @property
    def gap(self) -> float:
        if self.x is None or not math.isfinite(self.objective):
            return math.inf
        return max(0.0, (self.objective - self.bound) / max(1.0, abs(self.objective)))


@dataclass
class NodeResult:
    status: str  # optimal | infeasible | failed
    x: np.ndarray | None
    objective: float


def relax(mip: MixedIntegerProgram, lb, ub, node_solver=conic_solve, tol=1e-8) -> NodeResult:
    """Solve the continuous relaxation restricted to the box [lb, ub]."""
    prog = mip.program
    n = prog.n
    fixed = lb == ub
    keep = np.flatnonzero(~fixed)
    xf = np.where(fixed, lb, 0.0)
    const = float(prog.c @ xf)
    A = prog.A.tocsc()
    G = prog.G.tocsc()
    b = prog.b - A @ xf
    h = prog.h - G @ xf
    Ak = A[:, keep].tocsr()
    Gk = G[:, keep].tocsr()

    # equality rows without free columns must already hold
    a_nnz = np.diff(Ak.indptr)
    empty = a_nnz == 0
    if np.any(np.abs(b[empty]) > FEAS_TOL * (1 + np.abs(prog.b[empty]))):
        return NodeResult(INFEASIBLE, None, math.inf)
    Ak, b = Ak[~empty], b[~empty]

    # orthant rows without free columns likewise; cone rows are kept whole
    g_nnz = np.diff(Gk.indptr)
    keep_rows = np.ones(prog.m, bool)
    cones = []
    for kind, off, dim in prog.block_offsets():
        if kind == NONNEG:
            rows = np.arange(off, off + dim)
            dead = rows[g_nnz[rows] == 0]
            if np.any(h[dead] < -FEAS_TOL * (1 + np.abs(prog.h[dead]))):
                return NodeResult(INFEASIBLE, None, math.inf)
            keep_rows[dead] = False
            cones.append((kind, dim - len(dead)))
        else:
            cones.append((kind, dim))
    Gk, h = Gk[keep_rows], h[keep_rows]

    # finite bounds of the free columns become orthant rows
    lbk, ubk = lb[keep], ub[keep]
    up = np.flatnonzero(np.isfinite(ubk))
    lo = np.flatnonzero(np.isfinite(lbk))
    nk = len(keep)
    Bu = sp.csr_matrix((np.ones(len(up)), (np.arange(len(up)), up)), shape=(len(up), nk))
    Bl = sp.csr_matrix((-np.ones(len(lo)), (np.arange(len(lo)), lo)), shape=(len(lo), nk))
    G2 = sp.vstack([Bu, Bl, Gk]).tocsr()
    h2 = np.concatenate([ubk[up], -lbk[lo], h])
    cones = [(NONNEG, len(up) + len(lo))] + [c for c in cones if c[1] > 0 or c[0] != NONNEG]
    if nk == 0:
        # nothing left to choose: check the remaining cone rows directly
        sub = ConicProgram(np.zeros(0), sp.csr_matrix((0, 0)), np.zeros(0),
                           sp.csr_matrix((G2.shape[0], 0)), h2, tuple(cones))
        ok = sub.is_feasible(np.zeros(0), tol=FEAS_TOL)
        return NodeResult(OPTIMAL, xf.copy(), const) if ok else NodeResult(INFEASIBLE, None, math.inf)
    sub = ConicProgram(prog.c[keep], Ak, b, G2, h2, tuple(cones))
    sol = node_solver(sub, tol=tol)
    if sol.status == INFEASIBLE:
        return NodeResult(INFEASIBLE, None, math.inf)
    if not sol.usable:
        return NodeResult("failed", None, math.nan)
    x = xf.copy()
    x[keep] = sol.x
    return NodeResult(OPTIMAL, x, const + sol.primal_objective)


def most_fractional(x, integer, tol=INT_TOL):
    """Index of the most fractional integer column (lowest index on ties) or None."""
    idx = np.flatnonzero(integer)
    if idx.size == 0:
        return None
    frac = np.abs(x[idx] - np.round(x[idx]))
    score = np.minimum(frac, 1.0)
    best = int(np.argmax(score))  # argmax returns the first maximum
    if score[best] <= tol:
        return None
    return int(idx[best])


def branch(node: SearchNode, x, integer, next_id: int, bound: float):
    """Children fixing the most fractional column to 0 and to 1."""
    j = most_fractional(np.asarray(x, float), integer)
    if j is None:
        raise ValueError("branching needs a fractional integer column")
    down_ub = node.ub.copy()
    down_ub[j] = math.floor(x[j])
    up_lb = node.lb.copy()
    up_lb[j] = math.ceil(x[j])
    down = SearchNode(next_id, node.id, node.depth + 1, node.lb.copy(), down_ub, bound)
    upn = SearchNode(next_id + 1, node.id, node.depth + 1, up_lb, node.ub.copy(), bound)
    return j, down, upn


def solve_mip(mip: MixedIntegerProgram, node_solver=conic_solve, rel_gap: float = 1e-4,
              node_limit: int = 100000, time_limit: float = math.inf, incumbent=None,
              tol: float = 1e-8) -> Incumbent:
    """Best-bound-first search; ``incumbent`` optionally seeds the search with a point."""
    if not 0 <= rel_gap < 1:
        raise ValueError("rel_gap must lie in [0, 1)")
    start = time.perf_counter()
    integer = mip.integer
    lines = []
    trace = []
    best_x, best_obj = None, math.inf
    solves = 0

    def try_point(x, origin):
        """Fix the integer columns of x (rounded) and solve the rest."""
        nonlocal best_x, best_obj, solves
        r = np.round(x[integer])
        lb, ub = mip.lb.copy(), mip.ub.copy()
        lb[integer] = np.clip(r, mip.lb[integer], mip.ub[integer])
        ub[integer] = lb[integer]
        res = relax(mip, lb, ub, node_solver, tol)
        solves += 1
        if res.status == OPTIMAL and res.objective < best_obj:
            best_x, best_obj = res.x, res.objective
            lines.append(f"- {origin} {res.objective:.10g} incumbent")
            return True
        return False

    def dive(x, lb, ub):
        """Fix the least fractional integer column to its rounding until integral."""
        nonlocal solves
        lb, ub = lb.copy(), ub.copy()
        for _ in range(int(integer.sum()) + 1):
            free = np.flatnonzero(integer & (lb != ub))
            if free.size == 0 or most_fractional(x, integer) is None:
                return try_point(x, "dive")
            frac = np.abs(x[free] - np.round(x[free]))
            j = int(free[np.argmin(frac)])
            for val in (np.round(x[j]), 1.0 - np.round(x[j]) if mip.ub[j] - mip.lb[j] == 1 else None):
                if val is None:
                    return False
                lb2, ub2 = lb.copy(), ub.copy()
                lb2[j] = ub2[j] = np.clip(val, lb[j], ub[j])
                res = relax(mip, lb2, ub2, node_solver, tol)
                solves += 1
                if res.status == OPTIMAL:
                    lb, ub, x = lb2, ub2, res.x
                    break
            else:
                return False
        return False

    if incumbent is not None:
        try_point(np.asarray(incumbent, float), "warm-start")

    root = SearchNode(0, -1, 0, mip.lb.copy(), mip.ub.copy(), -math.inf)
    heap = [(-math.inf, 0, root)]
    next_id = 1
    nodes = 0
    status = None
    pruned = math.inf  # smallest bound among nodes discarded within the gap

    def lower_bound():
        return min(heap[0][0] if heap else math.inf, pruned, best_obj)

    def close_enough(bound):
        return bound >= best_obj - rel_gap * max(1.0, abs(best_obj))

    while heap:
        trace.append(lower_bound())
        if best_x is not None and close_enough(heap[0][0]):
            break
        if nodes >= node_limit or time.perf_counter() - start > time_limit:
            status = MIP_LIMIT
            break
        _, _, node = heapq.heappop(heap)
        nodes += 1
        res = relax(mip, node.lb, node.ub, node_solver, tol)
        solves += 1
        if res.status == INFEASIBLE:
            lines.append(f"{node.id} {node.parent} inf prune-infeasible")
            continue
        if res.status != OPTIMAL:
            # unresolved relaxation: keep the parent's bound and split blindly
            free = np.flatnonzero(integer & (node.lb != node.ub))
            if free.size == 0:
                lines.append(f"{node.id} {node.parent} nan unresolved")
                log.warning("node %d: relaxation unresolved with all integers fixed", node.id)
                continue
            xf = np.zeros(mip.program.n)
            xf[integer] = 0.5 * (node.lb[integer] + node.ub[integer])
            bound = node.bound
        else:
            xf, bound = res.x, max(res.objective, node.bound)
        if close_enough(bound):
            pruned = min(pruned, bound)
            lines.append(f"{node.id} {node.parent} {bound:.10g} prune-bound")
            continue
        j = most_fractional(xf, integer)
        if j is None and res.status == OPTIMAL:
            before = best_obj
            try_point(xf, f"node{node.id}")
            action = "integral" if best_obj < before else "integral-no-improvement"
            lines.append(f"{node.id} {node.parent} {bound:.10g} {action}")
            continue
        if j is None:
            j = int(np.flatnonzero(integer & (node.lb != node.ub))[0])
        if node.id == 0 and res.status == OPTIMAL:
            if not try_point(xf, "rounding") and best_x is None:
                dive(xf, node.lb, node.ub)
        down_ub = node.ub.copy()
        down_ub[j] = math.floor(xf[j]) if xf[j] < node.ub[j] else node.lb[j]
        up_lb = node.lb.copy()
        up_lb[j] = down_ub[j] + 1
        down = SearchNode(next_id, node.id, node.depth + 1, node.lb.copy(), down_ub, bound)
        upn = SearchNode(next_id + 1, node.id, node.depth + 1, up_lb, node.ub.copy(), bound)
        next_id += 2
        lines.append(f"{node.id} {node.parent} {bound:.10g} branch x{j}={xf[j]:.6f}")
        heapq.heappush(heap, (bound, down.id, down))
        heapq.heappush(heap, (bound, upn.id, upn))

    if status is None:
        status = MIP_OPTIMAL if best_x is not None else MIP_INFEASIBLE
    elif best_x is None:
        status = MIP_NO_INCUMBENT
    bound = lower_bound() if best_x is not None or heap else math.inf
    trace.append(bound)
    return Incumbent(status, best_x, best_obj, bound, nodes, solves, lines, trace,
                     time.perf_counter() - start)


def enumerate_binaries(mip: MixedIntegerProgram, node_solver=conic_solve, tol=1e-8):
    """Exhaustive oracle: best objective over all assignments of the binary columns."""
    idx = np.flatnonzero(mip.integer)
    if idx.size > 16:
        raise ValueError("too many binaries to enumerate")
    best, best_x = math.inf, None
    for mask in range(1 << idx.size):
        lb, ub = mip.lb.copy(), mip.ub.copy()
        bits = np.array([(mask >> k) & 1 for k in range(idx.size)], float)
        if np.any(bits < lb[idx]) or np.any(bits > ub[idx]):
            continue
        lb[idx] = ub[idx] = bits
        res = relax(mip, lb, ub, node_solver, tol)
        if res.status == OPTIMAL and res.objective < best:
            best, best_x = res.objective, res.x
    return best, best_x
