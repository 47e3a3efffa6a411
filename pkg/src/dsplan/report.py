"""Run reports, plan summaries, topology export and comparison tables.

A :class:`RunReport` is the single result object of every solve pipeline.
Its objective is always recomputed from the plan by solving the recourse
programs exactly, so reports from different methods are directly comparable.
Timing fields live under ``timings`` and are the only non-deterministic part.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .formulation import CHANCE, CHANCE_BIGM, FirstStage, FirstStagePlan, evaluate_plan
from .network import CANDIDATE, EXISTING, REPLACEMENT, Instance

STATUS_OPTIMAL = "optimal"
STATUS_LIMIT = "limit"
STATUS_ERROR = "error"
STATUSES = (STATUS_OPTIMAL, STATUS_LIMIT, STATUS_ERROR)

TIMING_KEYS = ("timings",)


def _clean(v):
    """JSON-safe floats (infinities become strings)."""
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(v, (np.floating, np.integer)):
        return _clean(v.item())
    if isinstance(v, dict):
        return {str(k): _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    return v


@dataclass
class RunReport:
    mode: str
    method: str
    epsilon: float
    rho: float
    tolerance: float
    status: str
    objective: dict  # total, investment, expected_operation
    plan: dict  # first-stage column name -> value
    invested_branches: list
    replaced_branches: list
    removed_branches: list
    substation_additions: dict  # node -> MVA
    capacitor_additions: dict  # node -> kVAr
    discarded: list  # scenario ids dropped by the exact selection at the final plan
    master_discarded: list  # scenario ids dropped by the master's indicators
    scenario_costs: dict  # scenario id -> operation cost (maintenance included)
    bound_trace: list  # dicts with iteration, lower, upper
    iterations: int
    gap: float
    stats: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    message: str = ""

    def to_dict(self, timing=True) -> dict:
        d = asdict(self)
        if not timing:
            for k in TIMING_KEYS:
                d.pop(k, None)
        return _clean(d)

    def to_json(self, timing=True) -> str:
        return json.dumps(self.to_dict(timing), indent=2, sort_keys=True) + "\n"

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())


def error_report(mode, method, epsilon, rho, tolerance, message) -> RunReport:
    return RunReport(mode, method, epsilon, rho, tolerance, STATUS_ERROR,
                     {"total": math.nan, "investment": math.nan, "expected_operation": math.nan},
                     {}, [], [], [], {}, {}, [], [], {}, [], 0, math.inf, message=message)


# -- scenario selection -----------------------------------------------------------

def select_upper_bound(J, probabilities, epsilon, resolution: int = 10 ** 6):
    """Exact ``min sum pi J (1 - w)`` subject to ``sum pi w <= epsilon``, w binary.

    Equal probabilities: dropping the k = floor(eps / pi) largest costs is
    optimal (ties resolved towards the lowest position).  Otherwise a 0/1
    knapsack over probabilities rounded up to ``1/resolution`` is solved by
    dynamic programming, which never admits an over-budget selection.
    Returns ``(J_bar, w_bar)``.
    """
    J = np.asarray(J, float)
    pi = np.asarray(probabilities, float)
    if not np.all(np.isfinite(J)):
        raise ValueError("scenario costs must be finite")
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    S = len(J)
    w = np.zeros(S)
    value = pi * J
    if S == 0 or epsilon <= 0:
        return float(value.sum()), w
    if np.allclose(pi, pi[0], rtol=0, atol=1e-12):
        k = min(S, int(math.floor(epsilon / pi[0] + 1e-9)))
        order = np.argsort(-value, kind="stable")
        # only dropping positive contributions helps
        drop = [i for i in order[:k] if value[i] > 0]
        w[drop] = 1.0
        return float(value.sum() - value[drop].sum()), w
    scale = resolution if S * resolution <= 5 * 10 ** 7 else max(1, 5 * 10 ** 7 // S)
    cap = int(math.floor(epsilon * scale + 1e-9))
    weight = np.ceil(pi * scale - 1e-9).astype(np.int64)
    best = np.zeros(cap + 1)
    take = np.zeros((S, cap + 1), bool)
    for s in range(S):
        ws = weight[s]
        if ws > cap or value[s] <= 0:
            continue
        cand = np.full(cap + 1, -np.inf)
        cand[ws:] = best[:cap + 1 - ws] + value[s]
        better = cand > best
        take[s] = better
        best = np.where(better, cand, best)
    c = int(np.argmax(best))
    for s in range(S - 1, -1, -1):
        if take[s, c]:
            w[s] = 1.0
            c -= weight[s]
    return float(value.sum() - value @ w), w


# -- plan summaries ----------------------------------------------------------------

def plan_summary(inst: Instance, plan: FirstStagePlan) -> dict:
    net = inst.network
    invested, replaced, removed = [], [], []
    for br in net.branches:
        k = plan.k.get(br.label, 0)
        f = plan.f.get(br.label, 1 if br.has_existing else 0)
        if br.kind == CANDIDATE and k:
            invested.append(br.label)
        elif br.kind == REPLACEMENT and k:
            replaced.append(br.label)
        elif br.kind == EXISTING and not f:
            removed.append(br.label)
    subs = {str(n): float(plan.S_sub[n] * net.base_mva) for n in sorted(plan.S_sub) if plan.v_sub.get(n)}
    caps = {str(n): float(plan.Q_cap[n] * net.base_mva * 1000.0) for n in sorted(plan.Q_cap)
            if plan.v_cap.get(n)}
    return {"invested_branches": invested, "replaced_branches": replaced, "removed_branches": removed,
            "substation_additions": subs, "capacitor_additions": caps}


@dataclass
class PlanObjective:
    total: float
    investment: float
    expected_operation: float
    discarded: np.ndarray  # w_bar
    scenario_costs: np.ndarray  # per scenario, maintenance included
    recourse: np.ndarray


def plan_objective(inst: Instance, x, fs: FirstStage, blocks, mode: str, epsilon: float = 0.0,
                   rho: float = 1.0) -> PlanObjective:
    """Exact objective of a first-stage vector.

    Stochastic: ``capital + maintenance + sum pi J``.  Chance:
    ``capital + maintenance + rho * min_w sum pi J (1 - w)`` with the exact
    scenario selection.
    """
    ev = evaluate_plan(inst, x, blocks, fs)
    pi = inst.scenarios.probabilities
    if mode in (CHANCE, CHANCE_BIGM):
        jbar, w = select_upper_bound(ev.recourse, pi, epsilon)
        expected = ev.maintenance + rho * jbar
    else:
        w = np.zeros(len(pi))
        expected = ev.maintenance + float(pi @ ev.recourse)
    return PlanObjective(ev.investment + expected, ev.investment, expected, w, ev.operation, ev.recourse)


def build_report(inst: Instance, fs: FirstStage, blocks, x, *, mode, method, epsilon, rho, tolerance,
                 status, bound_trace, iterations, gap, master_w=None, stats=None, timings=None,
                 message="") -> RunReport:
    x = np.asarray(x, float)
    idx = fs.index
    x = np.where(idx.binary, np.round(x), np.clip(x, idx.lb, idx.ub))
    obj = plan_objective(inst, x, fs, blocks, mode, epsilon, rho)
    plan = FirstStagePlan.from_vector(x, idx)
    summary = plan_summary(inst, plan)
    ids = inst.scenarios.ids
    master_w = np.zeros(len(ids)) if master_w is None else np.asarray(master_w)
    return RunReport(
        mode=mode, method=method, epsilon=float(epsilon), rho=float(rho), tolerance=float(tolerance),
        status=status,
        objective={"total": obj.total, "investment": obj.investment, "expected_operation": obj.expected_operation},
        plan={name: float(x[j]) for j, name in enumerate(idx.names)},
        discarded=[ids[s] for s in np.flatnonzero(obj.discarded > 0.5)],
        master_discarded=[ids[s] for s in np.flatnonzero(master_w > 0.5)],
        scenario_costs={str(ids[s]): float(v) for s, v in enumerate(obj.scenario_costs)},
        bound_trace=list(bound_trace), iterations=int(iterations), gap=float(gap),
        stats=dict(stats or {}), timings=dict(timings or {}), message=message, **summary,
    )


# -- topology export ---------------------------------------------------------------

KEPT, REMOVED, INVESTED, REPLACED = "kept-existing", "removed", "newly-invested", "replaced"
EDGE_STYLE = {
    KEPT: 'color="black"',
    REMOVED: 'color="gray60", style="dotted"',
    INVESTED: 'color="red", penwidth=2',
    REPLACED: 'color="gray60", style="dashed"',
}


def topology_edges(inst: Instance, plan: FirstStagePlan):
    """``(i, j, label, state, connected)`` per drawn conductor.

    A replacement with the new conductor built yields two parallel edges: the
    old conductor marked replaced and the new one marked newly invested.
    Candidates that were not built are omitted.
    """
    out = []
    for br in inst.network.branches:
        y = bool(plan.y.get(br.label, 0))
        k = bool(plan.k.get(br.label, 0))
        f = bool(plan.f.get(br.label, 0))
        if br.has_existing:
            if br.kind == REPLACEMENT and k:
                out.append((br.start, br.end, br.label, REPLACED, False))
            else:
                out.append((br.start, br.end, br.label, KEPT if f else REMOVED, y and f))
        if br.has_candidate and k:
            out.append((br.start, br.end, br.label, INVESTED, y))
    return out


def export_topology(plan: FirstStagePlan, inst: Instance, title: str = "plan") -> str:
    """Undirected DOT graph; see docs/formats.md for the attribute dialect."""
    net = inst.network
    subs = set(net.substation_nodes)
    caps = {c.node for c in net.capacitors if plan.v_cap.get(c.node)}
    lines = [f'graph "{title}" {{', "  node [shape=circle];"]
    for n in net.nodes:
        role = "substation" if n.id in subs else "load"
        extra = ", shape=box" if role == "substation" else ""
        cap = ', capacitor="yes"' if n.id in caps else ""
        lines.append(f'  {n.id} [role="{role}"{cap}{extra}];')
    for i, j, label, state, conn in topology_edges(inst, plan):
        style = EDGE_STYLE[state]
        if state in (KEPT, INVESTED) and not conn:
            style = style.replace('color="black"', 'color="black", style="dashed"') if state == KEPT \
                else style + ', style="dashed"'
        lines.append(f'  {i} -- {j} [branch="{label}", state="{state}", '
                     f'connected="{"yes" if conn else "no"}", {style}];')
    lines.append("}")
    return "\n".join(lines) + "\n"


# -- comparison table -------------------------------------------------------------

COMPARE_COLUMNS = ("method", "status", "objective", "iterations", "time", "gap")


def comparison_rows(reports: dict) -> list:
    """One row per method; a limit hit shows as ``T`` with the gap when known."""
    rows = []
    for name, rep in reports.items():
        if rep.status == STATUS_ERROR:
            rows.append({"method": name, "status": "error", "objective": None, "iterations": None,
                         "time": None, "gap": None, "message": rep.message})
            continue
        rows.append({
            "method": name, "status": "T" if rep.status == STATUS_LIMIT else rep.status,
            "objective": rep.objective["total"], "iterations": rep.iterations,
            "time": rep.timings.get("wall"), "gap": rep.gap if math.isfinite(rep.gap) else None,
        })
    return rows


def format_table(rows) -> str:
    def cell(key, v):
        if v is None:
            return "N/A"
        if key == "objective":
            return f"{v:.6g}"
        if key == "time":
            return f"{v:.2f}s"
        if key == "gap":
            return f"{100 * v:.4f}%"
        return str(v)

    body = [[cell(k, r.get(k)) for k in COMPARE_COLUMNS] for r in rows]
    widths = [max(len(h), *(len(b[i]) for b in body)) if body else len(h) for i, h in enumerate(COMPARE_COLUMNS)]
    out = ["  ".join(h.ljust(w) for h, w in zip(COMPARE_COLUMNS, widths))]
    out.append("  ".join("-" * w for w in widths))
    out += ["  ".join(c.ljust(w) for c, w in zip(b, widths)) for b in body]
    return "\n".join(out) + "\n"
