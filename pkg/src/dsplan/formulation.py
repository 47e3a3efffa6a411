"""Model construction: first-stage rows, parametric recourse blocks, extensive forms.

First-stage columns ``x`` hold every investment and topology decision.  Each
(scenario, time block) pair gets an independent recourse program whose
right-hand sides are affine in ``x``::

    min g'y   s.t.  E y = d0 - Ta x,   B y <= h0 - Tg x  (orthant rows),
                    (u_i^ij, u_j^ij, R, L) in rotated cones

Rows carry descriptive tags (see ``ROW_TAGS``) so every emitted constraint
can be traced back to a family of the planning model.
"""
from __future__ import annotations

import hashlib
import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .conic import NONNEG, RSOC, ConicProgram, solve
from .network import CANDIDATE, EXISTING, REPLACEMENT, Instance

SQRT2 = math.sqrt(2.0)

STOCHASTIC = "stochastic"
CHANCE = "chance"  # bilinear gating of cost
CHANCE_BIGM = "chance-bigm"
MODES = (STOCHASTIC, CHANCE, CHANCE_BIGM)

ROW_TAGS = {
    # first stage
    "substation-size": "substation addition only if the substation is built",
    "capacitor-size": "capacitor output only if the bank is installed",
    "replacement-exclusive": "replacement pair uses exactly one conductor",
    "existing-use": "existing-only branch connected only if kept",
    "candidate-use": "candidate-only branch connected only if built",
    "substation-no-parent": "substation nodes have no parent",
    "orientation": "a connected branch has exactly one direction",
    "single-parent": "every load node has one parent",
    "connectivity-capacity": "connectivity flow only along a chosen parent link",
    "connectivity-balance": "every load node absorbs one unit of connectivity flow",
    # recourse
    "active-balance": "nodal active power balance with curtailment",
    "reactive-balance": "nodal reactive balance with capacitor injection",
    "substation-active-sum": "substation active output equals outgoing flow",
    "substation-reactive-sum": "substation reactive output equals outgoing flow",
    "current-limit": "branch current limited by the installed conductor",
    "copy-upper": "voltage copy vanishes on an open branch",
    "copy-lower": "voltage copy nonnegative",
    "copy-gap-lower": "voltage copy below the node voltage",
    "copy-gap-upper": "voltage copy tracks the node voltage on a closed branch",
    "cosine-nonneg": "cosine product nonnegative",
    "voltage-bounds": "node voltage limits",
    "substation-active-cap": "substation active capacity with expansion",
    "substation-reactive-cap": "substation reactive capacity with expansion",
    "curtailment-nonneg": "curtailment nonnegative",
    "active-flow": "active flow from voltage products",
    "reactive-flow": "reactive flow from voltage products",
    "voltage-product-cone": "rotated cone on voltage products",
}


class ChanceBudgetError(ValueError):
    pass


class RecourseFailure(RuntimeError):
    pass


# -- first stage ----------------------------------------------------------------

class FirstStageIndex:
    """Column map of the first-stage vector."""

    def __init__(self, inst: Instance):
        net = inst.network
        self.names: list[str] = []
        self.col: dict[str, int] = {}
        self.binary: list[bool] = []
        self.lb: list[float] = []
        self.ub: list[float] = []
        big_m = inst.substation_big_m()
        self.big_m = big_m
        for s in net.substations:
            self._add(f"v_sub[{s.node}]", True, 1.0)
        for s in net.substations:
            self._add(f"S_sub[{s.node}]", False, big_m)
        for c in net.capacitors:
            self._add(f"v_cap[{c.node}]", True, 1.0)
        for c in net.capacitors:
            self._add(f"Q_cap[{c.node}]", False, c.q_max_kvar / 1000.0 / net.base_mva)
        for br in net.branches:
            if br.has_candidate:
                self._add(f"k[{br.label}]", True, 1.0)
        for br in net.branches:
            if br.has_existing:
                self._add(f"f[{br.label}]", True, 1.0)
        for br in net.branches:
            self._add(f"y[{br.label}]", True, 1.0)
        for br in net.branches:
            self._add(f"z[{br.start},{br.end}]", True, 1.0)
            self._add(f"z[{br.end},{br.start}]", True, 1.0)
        # connectivity flow carried from parent j to child i along z[i,j]
        n_load = len(net.nodes) - len(net.substations)
        for br in net.branches:
            self._add(f"F[{br.start},{br.end}]", False, float(n_load))
            self._add(f"F[{br.end},{br.start}]", False, float(n_load))
        self.lb = np.array(self.lb)
        self.ub = np.array(self.ub)
        self.binary = np.array(self.binary)

    def _add(self, name, binary, ub):
        self.col[name] = len(self.names)
        self.names.append(name)
        self.binary.append(binary)
        self.lb.append(0.0)
        self.ub.append(ub)

    def __len__(self):
        return len(self.names)

    def __getitem__(self, name) -> int:
        return self.col[name]

    def get(self, name):
        return self.col.get(name)


@dataclass
class Rows:
    """Sparse rows over named columns, split into equalities and orthant rows."""
    eq: list = field(default_factory=list)  # (tag, {col: coef}, rhs)
    le: list = field(default_factory=list)

    def add_eq(self, tag, coefs, rhs):
        self.eq.append((tag, coefs, float(rhs)))

    def add_le(self, tag, coefs, rhs):
        self.le.append((tag, coefs, float(rhs)))


def _matrix(rows, ncols, colmap=None):
    r, c, v = [], [], []
    for k, row in enumerate(rows):
        for j, a in row[1].items():
            if a != 0.0:
                r.append(k)
                c.append(colmap[j] if colmap is not None else j)
                v.append(a)
    return sp.csr_matrix((v, (r, c)), shape=(len(rows), ncols))


@dataclass
class FirstStage:
    index: FirstStageIndex
    c: np.ndarray  # capital cost (annualized) plus expected maintenance
    capital: np.ndarray  # annualized capital cost row only
    maintenance: np.ndarray  # expected maintenance row only
    A: sp.csr_matrix
    b: np.ndarray
    G: sp.csr_matrix
    h: np.ndarray
    eq_tags: list
    le_tags: list

    @property
    def lb(self):
        return self.index.lb

    @property
    def ub(self):
        return self.index.ub


def build_first_stage(inst: Instance, include_capacitor_operating_cost=None) -> FirstStage:
    """First-stage rows and the cost row (capital annuities plus maintenance)."""
    net = inst.network
    idx = FirstStageIndex(inst)
    crf = inst.economics.crf
    hours = inst.total_hours
    n = len(idx)
    capital = np.zeros(n)
    maint = np.zeros(n)
    rows = Rows()
    for s in net.substations:
        capital[idx[f"v_sub[{s.node}]"]] = crf * s.fixed_cost
        capital[idx[f"S_sub[{s.node}]"]] = crf * s.variable_cost * net.base_mva
        rows.add_le("substation-size", {idx[f"S_sub[{s.node}]"]: 1.0, idx[f"v_sub[{s.node}]"]: -idx.big_m}, 0.0)
    if include_capacitor_operating_cost is None:
        include_capacitor_operating_cost = inst.economics.include_capacitor_operating_cost
    for c in net.capacitors:
        v, q = idx[f"v_cap[{c.node}]"], idx[f"Q_cap[{c.node}]"]
        capital[v] = crf * c.fixed_cost
        capital[q] = crf * c.variable_cost * net.base_mva * 1000.0
        if include_capacitor_operating_cost:
            maint[v] = hours * c.operating_cost
        rows.add_le("capacitor-size", {q: 1.0, v: -idx.ub[q]}, 0.0)
    for br in net.branches:
        y = idx[f"y[{br.label}]"]
        maint[y] = hours * br.maintenance_cost
        if br.has_candidate:
            capital[idx[f"k[{br.label}]"]] = crf * br.fixed_cost * br.length
        if br.kind == REPLACEMENT:
            rows.add_eq("replacement-exclusive", {idx[f"k[{br.label}]"]: 1.0, idx[f"f[{br.label}]"]: 1.0}, 1.0)
        elif br.kind == EXISTING:
            rows.add_le("existing-use", {y: 1.0, idx[f"f[{br.label}]"]: -1.0}, 0.0)
        else:
            rows.add_le("candidate-use", {y: 1.0, idx[f"k[{br.label}]"]: -1.0}, 0.0)
        zij, zji = idx[f"z[{br.start},{br.end}]"], idx[f"z[{br.end},{br.start}]"]
        rows.add_eq("orientation", {zij: 1.0, zji: 1.0, y: -1.0}, 0.0)
    subs = set(net.substation_nodes)
    parents = defaultdict(list)
    for br in net.branches:
        parents[br.start].append(idx[f"z[{br.start},{br.end}]"])
        parents[br.end].append(idx[f"z[{br.end},{br.start}]"])
    for node in net.node_ids:
        if node in subs:
            for col in parents[node]:
                rows.add_eq("substation-no-parent", {col: 1.0}, 0.0)
        else:
            rows.add_eq("single-parent", {col: 1.0 for col in parents[node]}, 1.0)
    # every load node draws one unit from a substation, so no cycle can float free
    n_load = len(net.nodes) - len(subs)
    inflow, outflow = defaultdict(dict), defaultdict(dict)
    for br in net.branches:
        for child, parent in ((br.start, br.end), (br.end, br.start)):
            fcol = idx[f"F[{child},{parent}]"]
            rows.add_le("connectivity-capacity", {fcol: 1.0, idx[f"z[{child},{parent}]"]: -float(n_load)}, 0.0)
            inflow[child][fcol] = 1.0
            outflow[parent][fcol] = -1.0
    for node in net.node_ids:
        if node not in subs:
            rows.add_eq("connectivity-balance", {**inflow[node], **outflow[node]}, 1.0)
    return FirstStage(
        index=idx, c=capital + maint, capital=capital, maintenance=maint,
        A=_matrix(rows.eq, n), b=np.array([r[2] for r in rows.eq]),
        G=_matrix(rows.le, n), h=np.array([r[2] for r in rows.le]),
        eq_tags=[r[0] for r in rows.eq], le_tags=[r[0] for r in rows.le],
    )


# -- recourse -------------------------------------------------------------------

@dataclass(eq=False)
class RecourseBlock:
    """Recourse program of one (scenario, time block) pair, affine in ``x``."""
    scenario: int  # position in the scenario set
    block: int
    names: list
    program: ConicProgram  # right-hand sides evaluated at x = 0
    Ta: sp.csr_matrix
    Tg: sp.csr_matrix
    eq_tags: list
    le_tags: list  # tags of orthant rows, followed by one tag per cone row

    @property
    def d0(self):
        return self.program.b

    @property
    def h0(self):
        return self.program.h

    def program_at(self, x) -> ConicProgram:
        x = np.asarray(x, float)
        p = self.program
        return ConicProgram(p.c, p.A, p.b - self.Ta @ x, p.G, p.h - self.Tg @ x, p.cones, p.names)

    def column(self, name) -> int:
        return self.names.index(name)


def _recourse_columns(inst: Instance):
    net = inst.network
    names = []
    for br in net.branches:
        i, j = br.start, br.end
        names += [f"P[{i},{j}]", f"P[{j},{i}]", f"Q[{i},{j}]", f"Q[{j},{i}]",
                  f"R[{br.label}]", f"L[{br.label}]", f"u_copy[{i}|{br.label}]", f"u_copy[{j}|{br.label}]"]
    for nd in net.nodes:
        names += [f"u[{nd.id}]", f"r[{nd.id}]"]
    for s in net.substations:
        names += [f"P_I[{s.node}]", f"Q_I[{s.node}]", f"P_sb[{s.node}]", f"Q_sb[{s.node}]"]
    return names


def build_recourse(inst: Instance, s: int, t: int, index: FirstStageIndex | None = None) -> RecourseBlock:
    """Recourse block for scenario position ``s`` and time block ``t``."""
    net = inst.network
    index = index or FirstStageIndex(inst)
    names = _recourse_columns(inst)
    col = {nm: k for k, nm in enumerate(names)}
    ny = len(names)
    base = net.base_mva
    block = inst.time_blocks[t]
    pd, qd = inst.demand(t, s)
    node_pos = {nd.id: k for k, nd in enumerate(net.nodes)}
    subs = {sb.node: sb for sb in net.substations}
    cap_at = {c.node for c in net.capacitors}

    g = np.zeros(ny)
    loss = inst.loss_cost(t, s) * block.duration * base
    pen = inst.penalty_cost(t, s) * block.duration * base
    for nd in net.nodes:
        g[col[f"r[{nd.id}]"]] = pen
    for node in subs:
        g[col[f"P_I[{node}]"]] = loss

    eq, le = [], []  # (tag, coefs by y col, rhs, x coefs)
    # nodal balances
    out_p = defaultdict(dict)
    out_q = defaultdict(dict)
    for br in net.branches:
        i, j = br.start, br.end
        out_p[i][col[f"P[{i},{j}]"]] = -1.0
        out_p[j][col[f"P[{j},{i}]"]] = -1.0
        out_q[i][col[f"Q[{i},{j}]"]] = -1.0
        out_q[j][col[f"Q[{j},{i}]"]] = -1.0
    for nd in net.nodes:
        i, k = nd.id, node_pos[nd.id]
        cp = dict(out_p[i])
        cp[col[f"r[{i}]"]] = 1.0
        cq = dict(out_q[i])
        cq[col[f"r[{i}]"]] = nd.beta
        xq = {}
        if i in subs:
            cp[col[f"P_I[{i}]"]] = 1.0
            cq[col[f"Q_I[{i}]"]] = 1.0
        if i in cap_at:
            xq[index[f"Q_cap[{i}]"]] = 1.0
        eq.append(("active-balance", cp, pd[k], {}))
        eq.append(("reactive-balance", cq, qd[k], xq))
    for i, sb in subs.items():
        cp = dict(out_p[i])
        cq = dict(out_q[i])
        cp[col[f"P_sb[{i}]"]] = 1.0
        cq[col[f"Q_sb[{i}]"]] = 1.0
        eq.append(("substation-active-sum", cp, 0.0, {}))
        eq.append(("substation-reactive-sum", cq, 0.0, {}))
        S = index[f"S_sub[{i}]"]
        le.append(("substation-active-cap", {col[f"P_sb[{i}]"]: 1.0}, sb.p_max, {S: -sb.power_factor}))
        le.append(("substation-reactive-cap", {col[f"Q_sb[{i}]"]: 1.0}, sb.q_max,
                   {S: -math.sin(math.acos(sb.power_factor))}))

    cones = []
    for br in net.branches:
        i, j = br.start, br.end
        gg, bb, bsh = br.g, br.b, br.b_sh
        R, L = col[f"R[{br.label}]"], col[f"L[{br.label}]"]
        ui, uj = col[f"u_copy[{i}|{br.label}]"], col[f"u_copy[{j}|{br.label}]"]
        bhalf = bb + 0.5 * bsh
        # flows leaving each endpoint
        eq.append(("active-flow", {ui: SQRT2 * gg, R: -gg, L: -bb, col[f"P[{i},{j}]"]: -1.0}, 0.0, {}))
        eq.append(("active-flow", {uj: SQRT2 * gg, R: -gg, L: bb, col[f"P[{j},{i}]"]: -1.0}, 0.0, {}))
        eq.append(("reactive-flow", {ui: -SQRT2 * bhalf, R: bb, L: -gg, col[f"Q[{i},{j}]"]: -1.0}, 0.0, {}))
        eq.append(("reactive-flow", {uj: -SQRT2 * bhalf, R: bb, L: gg, col[f"Q[{j},{i}]"]: -1.0}, 0.0, {}))
        # current limit; right-hand side is the squared rating of the active conductor
        coefs = {
            ui: SQRT2 * (gg ** 2 + bhalf ** 2), uj: SQRT2 * (gg ** 2 + bb ** 2),
            R: -2.0 * (gg ** 2 + bb ** 2 + 0.5 * bsh * bb), L: gg * bsh,
        }
        ie2, ic2 = br.i_max_existing ** 2, br.i_max_candidate ** 2
        if br.kind == EXISTING:
            le.append(("current-limit", coefs, ie2, {}))
        elif br.kind == CANDIDATE:
            le.append(("current-limit", coefs, 0.0, {index[f"k[{br.label}]"]: -ic2}))
        else:
            le.append(("current-limit", coefs, ie2, {index[f"k[{br.label}]"]: -(ic2 - ie2)}))
        y = index[f"y[{br.label}]"]
        for node, uc in ((i, ui), (j, uj)):
            vmax2 = net.node(node).v_max ** 2 / SQRT2
            le.append(("copy-upper", {uc: 1.0}, 0.0, {y: -vmax2}))
            le.append(("copy-lower", {uc: -1.0}, 0.0, {}))
            le.append(("copy-gap-lower", {uc: 1.0, col[f"u[{node}]"]: -1.0}, 0.0, {}))
            le.append(("copy-gap-upper", {col[f"u[{node}]"]: 1.0, uc: -1.0}, vmax2, {y: vmax2}))
        le.append(("cosine-nonneg", {R: -1.0}, 0.0, {}))
        cones.append((ui, uj, R, L))
    for nd in net.nodes:
        u = col[f"u[{nd.id}]"]
        le.append(("voltage-bounds", {u: 1.0}, nd.v_max ** 2 / SQRT2, {}))
        le.append(("voltage-bounds", {u: -1.0}, -nd.v_min ** 2 / SQRT2, {}))
        le.append(("curtailment-nonneg", {col[f"r[{nd.id}]"]: -1.0}, 0.0, {}))

    nx = len(index)
    E = _matrix(eq, ny)
    d0 = np.array([r[2] for r in eq])
    Ta = _matrix([(None, r[3]) for r in eq], nx)
    m_lin = len(le)
    cone_rows = []
    for cvars in cones:
        for v in cvars:
            cone_rows.append(("voltage-product-cone", {v: -1.0}, 0.0, {}))
    allrows = le + cone_rows
    B = _matrix(allrows, ny)
    h0 = np.array([r[2] for r in allrows])
    Tg = _matrix([(None, r[3]) for r in allrows], nx)
    layout = ((NONNEG, m_lin),) + tuple((RSOC, 4) for _ in cones)
    prog = ConicProgram(g, E, d0, B, h0, layout, tuple(names))
    return RecourseBlock(
        scenario=s, block=t, names=names, program=prog, Ta=Ta.tocsr(), Tg=Tg.tocsr(),
        eq_tags=[r[0] for r in eq], le_tags=[r[0] for r in allrows],
    )


def build_all_recourse(inst: Instance, index: FirstStageIndex | None = None):
    """``blocks[s][t]`` for every scenario position and time block."""
    index = index or FirstStageIndex(inst)
    return [[build_recourse(inst, s, t, index) for t in range(len(inst.time_blocks))]
            for s in range(len(inst.scenarios))]


# -- plans ----------------------------------------------------------------------

@dataclass
class FirstStagePlan:
    v_sub: dict
    S_sub: dict  # pu
    v_cap: dict
    Q_cap: dict  # pu
    k: dict
    f: dict
    y: dict
    z: dict  # (child, parent) -> 0/1
    F: dict = field(default_factory=dict)  # (child, parent) -> connectivity flow

    @classmethod
    def from_vector(cls, x, index: FirstStageIndex, round_binaries=True):
        x = np.asarray(x, float)
        out = {k: {} for k in ("v_sub", "S_sub", "v_cap", "Q_cap", "k", "f", "y", "z", "F")}
        for name, j in index.col.items():
            kind, key = name.split("[", 1)
            key = key[:-1]
            val = float(x[j])
            if index.binary[j] and round_binaries:
                val = int(round(val))
            if kind in ("v_sub", "S_sub", "v_cap", "Q_cap"):
                key = int(key)
            elif kind in ("z", "F"):
                a, b = key.split(",")
                key = (int(a), int(b))
            out[kind][key] = val
        return cls(**out)

    def to_vector(self, index: FirstStageIndex) -> np.ndarray:
        x = np.zeros(len(index))
        for kind in ("v_sub", "S_sub", "v_cap", "Q_cap", "k", "f", "y"):
            for key, val in getattr(self, kind).items():
                x[index[f"{kind}[{key}]"]] = val
        for kind in ("z", "F"):
            for (a, b), val in getattr(self, kind).items():
                x[index[f"{kind}[{a},{b}]"]] = val
        return x

    def connected(self) -> list:
        return [label for label, v in self.y.items() if v]


def first_stage_feasible(fs: FirstStage, x, tol=1e-6) -> bool:
    x = np.asarray(x, float)
    if np.any(x < fs.lb - tol) or np.any(x > fs.ub + tol):
        return False
    if fs.A.shape[0] and np.max(np.abs(fs.A @ x - fs.b)) > tol:
        return False
    if fs.G.shape[0] and np.max(fs.G @ x - fs.h) > tol:
        return False
    return True


# -- radiality ------------------------------------------------------------------

@dataclass
class RadialityVerdict:
    ok: bool
    violations: list
    warnings: list


def check_radiality(plan: FirstStagePlan, network) -> RadialityVerdict:
    """Parent constraints plus a forest check on the connected branches."""
    violations, warnings = [], []
    subs = set(network.substation_nodes)
    for br in network.branches:
        zij = plan.z.get((br.start, br.end), 0)
        zji = plan.z.get((br.end, br.start), 0)
        if zij + zji != plan.y.get(br.label, 0):
            violations.append(f"branch {br.label}: orientation does not match connection status")
    touched = {n for br in network.branches if plan.y.get(br.label, 0) for n in (br.start, br.end)}
    for node in network.node_ids:
        parents = [p for (c, p), v in plan.z.items() if c == node and v]
        if node in subs and parents:
            violations.append(f"substation {node} has a parent")
        # isolated nodes form a degenerate tree and are only warned about below
        if node not in subs and node in touched and len(parents) != 1:
            violations.append(f"node {node} has {len(parents)} parents")

    adj = {i: [] for i in network.node_ids}
    edges = [br for br in network.branches if plan.y.get(br.label, 0)]
    for br in edges:
        adj[br.start].append(br.end)
        adj[br.end].append(br.start)
    seen = set()
    for root in network.node_ids:
        if root in seen:
            continue
        comp, stack = [], [root]
        seen.add(root)
        while stack:
            i = stack.pop()
            comp.append(i)
            for j in adj[i]:
                if j not in seen:
                    seen.add(j)
                    stack.append(j)
        if len(comp) == 1:
            if root not in subs:
                warnings.append(f"isolated node {root}")
            continue
        comp_set = set(comp)
        n_edges = sum(1 for br in edges if br.start in comp_set)
        if n_edges != len(comp) - 1:
            cyc = sorted(comp_set)
            violations.append(f"cycle among nodes {cyc}")
        n_sub = len(comp_set & subs)
        if n_sub != 1:
            violations.append(f"tree {sorted(comp_set)} contains {n_sub} substations")
    return RadialityVerdict(not violations, violations, warnings)


# -- recourse evaluation --------------------------------------------------------

@dataclass
class RecourseSolution:
    scenario: int
    block: int
    values: dict  # column name -> value
    objective: float

    def get(self, name):
        return self.values[name]


def solve_recourse(block: RecourseBlock, x, tol=1e-8):
    """Solve a recourse block at ``x``; raises on anything but optimality."""
    prog = block.program_at(x)
    sol = solve(prog, tol=tol)
    if not sol.usable:
        raise RecourseFailure(
            f"recourse (scenario position {block.scenario}, block {block.block}) ended {sol.status}")
    return prog, sol


@dataclass
class PlanEvaluation:
    investment: float  # annualized capital
    maintenance: float  # expected maintenance (first-stage affine)
    recourse: np.ndarray  # per-scenario sum over blocks of the recourse optimum
    operation: np.ndarray  # per-scenario operation cost incl. maintenance
    total: float
    solutions: list = field(default_factory=list, repr=False)


def evaluate_plan(inst: Instance, x, blocks=None, fs: FirstStage | None = None, keep_solutions=False,
                  tol=1e-8) -> PlanEvaluation:
    """Exact operation cost of each scenario for a fixed first-stage vector."""
    fs = fs or build_first_stage(inst)
    blocks = blocks or build_all_recourse(inst, fs.index)
    x = np.asarray(x, float)
    J = np.zeros(len(inst.scenarios))
    sols = []
    for s, row in enumerate(blocks):
        for blk in row:
            _, sol = solve_recourse(blk, x, tol)
            J[s] += sol.primal_objective
            if keep_solutions:
                sols.append(RecourseSolution(s, blk.block, dict(zip(blk.names, sol.x)), sol.primal_objective))
    inv = float(fs.capital @ x)
    maint = float(fs.maintenance @ x)
    op = J + maint
    total = inv + float(inst.scenarios.probabilities @ op)
    return PlanEvaluation(inv, maint, J, op, total, sols)


def recourse_cost_from_values(inst: Instance, s: int, t: int, values: dict) -> float:
    """Operation cost of one block recomputed from named primitives."""
    net = inst.network
    d = inst.time_blocks[t].duration * net.base_mva
    pen = inst.penalty_cost(t, s)
    loss = inst.loss_cost(t, s)
    total = sum(pen * values[f"r[{nd.id}]"] for nd in net.nodes)
    total += sum(loss * values[f"P_I[{sb.node}]"] for sb in net.substations)
    return d * total


# -- extensive forms ------------------------------------------------------------

@dataclass(eq=False)
class ExtensiveModel:
    """Monolithic mixed-integer cone program over [x, y_(s,t)..., eta_s, w_s]."""
    program: ConicProgram
    lb: np.ndarray
    ub: np.ndarray
    integer: np.ndarray
    n_first: int
    block_slices: list  # (s, t, slice)
    eta: np.ndarray  # column indices (empty in stochastic mode)
    w: np.ndarray
    mode: str
    epsilon: float
    rho: float
    eq_tags: list
    le_tags: list
    eta_scale: float = 1.0  # eta columns hold eta_s / eta_scale


def recourse_cost_bound(inst: Instance, s: int, margin: float = 2.0) -> float:
    """Upper bound on one scenario's recourse optimum for any first-stage plan."""
    total = 0.0
    for t, blk in enumerate(inst.time_blocks):
        pd, _ = inst.demand(t, s)
        d = blk.duration * inst.network.base_mva
        total += d * (inst.penalty_cost(t, s) + inst.loss_cost(t, s)) * float(pd.sum())
    return margin * total + 1.0


def recourse_floor(inst: Instance, s: int) -> float:
    """Lower bound on one scenario's recourse optimum valid for every plan.

    Substation injections cover demand minus curtailment plus nonnegative
    branch losses, and curtailment is priced at least at the injection price,
    so every block pays at least the injection price on its full demand.
    Returns 0 when a branch has negative conductance (losses not signed).
    """
    if any(br.g < 0 for br in inst.network.branches):
        return 0.0
    total = 0.0
    for t, blk in enumerate(inst.time_blocks):
        pd, _ = inst.demand(t, s)
        price = min(inst.loss_cost(t, s), inst.penalty_cost(t, s))
        total += blk.duration * inst.network.base_mva * price * float(pd.sum())
    return total


def build_extensive(inst: Instance, mode: str = STOCHASTIC, epsilon: float = 0.0, rho: float = 1.0,
                    big_m: float | None = None, fs: FirstStage | None = None, blocks=None) -> ExtensiveModel:
    """Extensive form in stochastic, bilinear chance or big-M chance mode."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if not rho > 0:
        raise ValueError("rho must be positive")
    if not 0 <= epsilon:
        raise ValueError("epsilon must be >= 0")
    if epsilon >= 1:
        raise ChanceBudgetError("chance budget empties scenario set")
    fs = fs or build_first_stage(inst)
    blocks = blocks or build_all_recourse(inst, fs.index)
    probs = inst.scenarios.probabilities
    S = len(probs)
    nx = len(fs.index)
    chance = mode != STOCHASTIC
    weight = 1.0 if not chance else rho

    widths = [blk.program.n for row in blocks for blk in row]
    ny = sum(widths)
    n = nx + ny + (2 * S if chance else 0)
    eta = np.arange(nx + ny, nx + ny + S) if chance else np.zeros(0, np.int64)
    w = np.arange(nx + ny + S, nx + ny + 2 * S) if chance else np.zeros(0, np.int64)

    c = np.zeros(n)
    c[:nx] = fs.c
    A_parts, b_parts, Gl_parts, hl_parts, Gc_parts, hc_parts = [], [], [], [], [], []
    eq_tags = list(fs.eq_tags)
    le_tags = list(fs.le_tags)
    cone_tags = []
    cones_soc = []

    def pad(M, col0):
        """Place a sparse block M (rows x k) at column offset col0."""
        M = M.tocoo()
        return sp.csr_matrix((M.data, (M.row, M.col + col0)), shape=(M.shape[0], n))

    def pad_x(M):
        M = M.tocoo()
        return sp.csr_matrix((M.data, (M.row, M.col)), shape=(M.shape[0], n))

    A_parts.append(pad_x(fs.A))
    b_parts.append(fs.b)
    Gl_parts.append(pad_x(fs.G))
    hl_parts.append(fs.h)

    slices = []
    off = nx
    bigm_rows = []
    for s, row in enumerate(blocks):
        for blk in row:
            p = blk.program
            k = p.n
            sl = slice(off, off + k)
            slices.append((s, blk.block, sl))
            m_lin = p.cones[0][1]
            G_lin, G_cone = p.G[:m_lin], p.G[m_lin:]
            Tg_lin, Tg_cone = blk.Tg[:m_lin], blk.Tg[m_lin:]
            Aeq = pad_x(blk.Ta) + pad(p.A, off)
            Glin = pad_x(Tg_lin) + pad(G_lin, off)
            Gcone = pad_x(Tg_cone) + pad(G_cone, off)
            if mode == CHANCE_BIGM:
                M = big_m if big_m is not None else 1e3
                wcol = sp.csr_matrix((np.full(p.p, -M), (np.arange(p.p), np.full(p.p, w[s]))), shape=(p.p, n))
                Gl_parts += [Aeq + wcol, -Aeq + wcol]
                hl_parts += [p.b, -p.b]
                le_tags += [f"{t}" for t in blk.eq_tags] * 2
                wl = sp.csr_matrix((np.full(m_lin, -M), (np.arange(m_lin), np.full(m_lin, w[s]))),
                                   shape=(m_lin, n))
                Gl_parts.append(Glin + wl)
                hl_parts.append(p.h[:m_lin])
                le_tags += blk.le_tags[:m_lin]
                # relax the two leading entries of each rotated block
                ncone = G_cone.shape[0]
                rr = [r for r in range(ncone) if r % 4 in (0, 1)]
                wc = sp.csr_matrix((np.full(len(rr), -M), (rr, np.full(len(rr), w[s]))), shape=(ncone, n))
                Gc_parts.append(Gcone + wc)
            else:
                A_parts.append(Aeq)
                b_parts.append(p.b)
                eq_tags += blk.eq_tags
                Gl_parts.append(Glin)
                hl_parts.append(p.h[:m_lin])
                le_tags += blk.le_tags[:m_lin]
                Gc_parts.append(Gcone)
            hc_parts.append(p.h[m_lin:])
            cones_soc += list(p.cones[1:])
            cone_tags += blk.le_tags[m_lin:]
            if chance:
                bigm_rows.append((s, sl, p.c))
            else:
                c[sl] = weight * probs[s] * p.c
            off += k

    integer = np.zeros(n, bool)
    integer[:nx] = fs.index.binary
    lb = np.concatenate([fs.lb, np.full(ny, -np.inf), np.zeros(2 * S if chance else 0)])
    ub = np.concatenate([fs.ub, np.full(ny, np.inf), np.full(S, np.inf) if chance else [],
                         np.ones(S) if chance else []])
    eta_scale = 1.0
    if chance:
        integer[w] = True
        # eta in units of the largest cost bound keeps the gate rows well scaled
        bounds = [recourse_cost_bound(inst, s) for s in range(S)]
        eta_scale = max(bounds)
        c[eta] = rho * probs * eta_scale
        if epsilon == 0:
            ub[w] = 0.0
        # eta_s >= sum_t g_st y_st - M_s w_s, divided by eta_scale
        for s in range(S):
            coefs = np.zeros(n)
            for s2, sl, g in bigm_rows:
                if s2 == s:
                    coefs[sl] = g / eta_scale
            coefs[eta[s]] = -1.0
            coefs[w[s]] = -bounds[s] / eta_scale
            Gl_parts.append(sp.csr_matrix(coefs[None, :]))
            hl_parts.append(np.zeros(1))
            le_tags.append("scenario-cost-gate")
            e = np.zeros(n)
            e[eta[s]] = -1.0
            Gl_parts.append(sp.csr_matrix(e[None, :]))
            hl_parts.append(np.zeros(1))
            le_tags.append("scenario-cost-nonneg")
        bud = np.zeros(n)
        bud[w] = probs
        Gl_parts.append(sp.csr_matrix(bud[None, :]))
        hl_parts.append(np.array([epsilon + 1e-9]))
        le_tags.append("chance-budget")

    A = sp.vstack(A_parts).tocsr()
    Glin = sp.vstack(Gl_parts).tocsr()
    Gc = sp.vstack(Gc_parts).tocsr() if Gc_parts else sp.csr_matrix((0, n))
    G = sp.vstack([Glin, Gc]).tocsr()
    h = np.concatenate(hl_parts + hc_parts)
    cones = ((NONNEG, Glin.shape[0]),) + tuple(cones_soc)
    prog = ConicProgram(c, A, np.concatenate(b_parts), G, h, cones)
    return ExtensiveModel(prog, lb, ub, integer, nx, slices, eta, w, mode, float(epsilon), float(rho),
                          eq_tags, le_tags + cone_tags, eta_scale)


# -- canonical dump -------------------------------------------------------------

def _fmt(v):
    return f"{v:.12g}"


def canonical_rows(fs: FirstStage, blocks) -> list[str]:
    """One text line per row with named coefficients (recourse columns prefixed by block)."""
    lines = []
    names = fs.index.names

    def line(tag, sense, coefs, rhs):
        body = " ".join(f"{_fmt(v)}*{nm}" for nm, v in sorted(coefs.items()) if v != 0.0)
        return f"{tag} | {body} {sense} {_fmt(rhs)}"

    for M, rhs, tags, sense in ((fs.A, fs.b, fs.eq_tags, "="), (fs.G, fs.h, fs.le_tags, "<=")):
        M = M.tocsr()
        for r in range(M.shape[0]):
            row = M.getrow(r)
            lines.append(line(tags[r], sense, {names[j]: v for j, v in zip(row.indices, row.data)}, rhs[r]))
    for row in blocks:
        for blk in row:
            pre = f"s{blk.scenario}t{blk.block}."
            p = blk.program
            m_lin = p.cones[0][1]
            for M, T, rhs, tags, sense in ((p.A, blk.Ta, p.b, blk.eq_tags, "="),
                                           (p.G, blk.Tg, p.h, blk.le_tags, "<=")):
                M, T = M.tocsr(), T.tocsr()
                for r in range(M.shape[0]):
                    coefs = {pre + blk.names[j]: v for j, v in zip(M.getrow(r).indices, M.getrow(r).data)}
                    tr = T.getrow(r)
                    coefs.update({names[j]: v for j, v in zip(tr.indices, tr.data)})
                    s = sense if r < m_lin or sense == "=" else "cone"
                    lines.append(line(tags[r], s, coefs, rhs[r]))
    return lines


def canonical_dump(fs: FirstStage, blocks) -> str:
    return "\n".join(canonical_rows(fs, blocks)) + "\n"


def canonical_hash(lines) -> str:
    """Order-independent digest of a row set."""
    return hashlib.sha256("\n".join(sorted(lines)).encode()).hexdigest()


def extensive_rows(model: ExtensiveModel, fs: FirstStage, blocks) -> list[str]:
    """Canonical lines of an extensive model, with columns named as in :func:`canonical_rows`."""
    names = list(fs.index.names) + [""] * (model.program.n - model.n_first)
    for (s, t, sl) in model.block_slices:
        blk = blocks[s][t]
        for k, nm in enumerate(blk.names):
            names[sl.start + k] = f"s{s}t{t}.{nm}"
    for s, (e, w) in enumerate(zip(model.eta, model.w)):
        names[e] = f"eta[{s}]"
        names[w] = f"w[{s}]"
    p = model.program
    m_lin = p.cones[0][1]
    ntag_eq = len(fs.eq_tags) + sum(len(b.eq_tags) for row in blocks for b in row)
    lines = []
    for M, rhs, sense, tags in ((p.A, p.b, "=", model.eq_tags[:ntag_eq]), (p.G, p.h, "<=", model.le_tags)):
        M = M.tocsr()
        for r in range(M.shape[0]):
            row = M.getrow(r)
            body = " ".join(f"{_fmt(v)}*{nm}" for nm, v in
                            sorted((names[j], v) for j, v in zip(row.indices, row.data)) if v != 0.0)
            s = sense if (sense == "=" or r < m_lin) else "cone"
            lines.append(f"{tags[r]} | {body} {s} {_fmt(rhs[r])}")
    return lines
