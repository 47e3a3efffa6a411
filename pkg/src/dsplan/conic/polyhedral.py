"""Linear outer approximation of second-order cones.

Each planar constraint ||(a, b)|| <= t is replaced by the rotation tower of
Ben-Tal and Nemirovski: L reflections halve the angle of (a, b) each time, so
the final vector lies in a wedge of half-angle pi/2^(L+1) around the first
axis.  Every point of the polyhedron satisfies ||(a, b)|| <= (1 + nu) t with
nu = 1/cos(pi/2^(L+1)) - 1, and every point of the cone extends to a point of
the polyhedron.  Higher-dimensional cones are split into a binary tree of
planar cones.

The approximating LP keeps the original equality rows and orthant rows first
and in order.  Its right-hand sides are linear in the original ``(b, h)``;
:class:`PolyhedralProgram` stores that map so LP duals can be pulled back to
multipliers of the original rows.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .cones import NONNEG, SOC
from .program import ConicProgram, rotated_to_soc, rotation_matrix


def levels_for_accuracy(nu: float) -> int:
    """Smallest tower height L with 1/cos(pi/2^(L+1)) - 1 <= nu."""
    if not 0 < nu < 0.5:
        raise ValueError("accuracy must lie in (0, 0.5)")
    L = 1
    while 1.0 / math.cos(math.pi / 2 ** (L + 1)) - 1.0 > nu:
        L += 1
    return L


def tower_accuracy(levels: int) -> float:
    return 1.0 / math.cos(math.pi / 2 ** (levels + 1)) - 1.0


@dataclass(frozen=True, eq=False)
class PolyhedralProgram:
    """LP approximation plus the linear map from original to LP right-hand sides.

    ``b_lp = Bb @ b + Bh @ h`` and ``h_lp = Hb @ b + Hh @ h``; the LP
    variables start with the original ones.
    """
    program: ConicProgram
    source: ConicProgram
    Bb: sp.csr_matrix
    Bh: sp.csr_matrix
    Hb: sp.csr_matrix
    Hh: sp.csr_matrix
    levels: int
    accuracy: float

    def with_rhs(self, b, h) -> ConicProgram:
        """Same LP for a new original right-hand side."""
        p = self.program
        return ConicProgram(p.c, p.A, self.Bb @ b + self.Bh @ h, p.G, self.Hb @ b + self.Hh @ h, p.cones, p.names)

    def pull_back(self, y, z):
        """Multipliers of the original rows that reproduce the LP dual objective."""
        return self.Bb.T @ y + self.Hb.T @ z, self.Bh.T @ y + self.Hh.T @ z


class _Builder:
    """Accumulates rows of the form  coef.[x, aux] + const(h)  (<= 0 or = 0)."""

    def __init__(self, n):
        self.nvar = n
        self.ineq = []  # (coef dict, hconst dict)
        self.eq = []

    def new_var(self):
        self.nvar += 1
        return {self.nvar - 1: 1.0}, {}

    def le(self, expr):
        self.ineq.append(expr)

    def equal(self, expr):
        self.eq.append(expr)


def _comb(*terms):
    """Linear combination of expressions given as (scale, (coef, hconst))."""
    coef, hc = {}, {}
    for a, (c, h) in terms:
        for k, v in c.items():
            coef[k] = coef.get(k, 0.0) + a * v
        for k, v in h.items():
            hc[k] = hc.get(k, 0.0) + a * v
    return coef, hc


def _planar(bld: _Builder, a, b, t, levels):
    """Emit the tower for ||(a, b)|| <= t."""
    xi = bld.new_var()
    eta = bld.new_var()
    bld.le(_comb((1, a), (-1, xi)))
    bld.le(_comb((-1, a), (-1, xi)))
    bld.le(_comb((1, b), (-1, eta)))
    bld.le(_comb((-1, b), (-1, eta)))
    for j in range(1, levels + 1):
        th = math.pi / 2 ** (j + 1)
        cs, sn = math.cos(th), math.sin(th)
        xi_n, eta_n = bld.new_var(), bld.new_var()
        bld.equal(_comb((1, xi_n), (-cs, xi), (-sn, eta)))
        bld.le(_comb((-sn, xi), (cs, eta), (-1, eta_n)))
        bld.le(_comb((sn, xi), (-cs, eta), (-1, eta_n)))
        xi, eta = xi_n, eta_n
    bld.le(_comb((1, xi), (-1, t)))
    bld.le(_comb((1, eta), (-math.tan(math.pi / 2 ** (levels + 1)), xi)))


def _cone(bld: _Builder, t, vec, levels):
    """||vec|| <= t through a binary tree of planar towers."""
    if len(vec) == 1:
        bld.le(_comb((1, vec[0]), (-1, t)))
        bld.le(_comb((-1, vec[0]), (-1, t)))
        return
    while len(vec) > 2:
        nxt = []
        for k in range(0, len(vec) - 1, 2):
            r = bld.new_var()
            _planar(bld, vec[k], vec[k + 1], r, levels)
            nxt.append(r)
        if len(vec) % 2:
            nxt.append(vec[-1])
        vec = nxt
    _planar(bld, vec[0], vec[1], t, levels)


def polyhedral_approximation(program: ConicProgram, nu: float = 1e-3) -> PolyhedralProgram:
    """Replace every cone of ``program`` by a polyhedron of accuracy ``nu``."""
    source = program
    if not 0 < nu < 0.5:
        raise ValueError("accuracy must lie in (0, 0.5)")
    Q = rotation_matrix(program) if program.has_rotated() else None
    program = rotated_to_soc(program)
    n, p, m = program.n, program.p, program.m
    G = program.G.tocsr()

    depth = 1
    for kind, dim in program.cones:
        if kind == SOC and dim > 2:
            depth = max(depth, math.ceil(math.log2(dim - 1)))
    per_level = (1.0 + nu) ** (1.0 / depth) - 1.0
    levels = levels_for_accuracy(per_level)

    bld = _Builder(n)
    keep = []  # orthant rows copied verbatim
    for kind, off, dim in program.block_offsets():
        if kind == NONNEG:
            keep.extend(range(off, off + dim))
            continue
        # slack component i is h_i - G_i x
        exprs = []
        for i in range(off, off + dim):
            row = G.getrow(i)
            exprs.append(({int(j): -float(v) for j, v in zip(row.indices, row.data)}, {i: 1.0}))
        _cone(bld, exprs[0], exprs[1:], levels)

    N = bld.nvar
    # inequality rows: kept rows then tower rows (coef.x + const <= 0)
    rows, cols, vals, hr, hcidx, hv = [], [], [], [], [], []
    Gk = G[keep, :].tocoo()
    rows += list(Gk.row)
    cols += list(Gk.col)
    vals += list(Gk.data)
    hr += list(range(len(keep)))
    hcidx += keep
    hv += [1.0] * len(keep)
    r = len(keep)
    for coef, hc in bld.ineq:
        for j, v in coef.items():
            rows.append(r)
            cols.append(j)
            vals.append(v)
        for k, v in hc.items():
            hr.append(r)
            hcidx.append(k)
            hv.append(-v)
        r += 1
    m_lp = r
    G_lp = sp.csr_matrix((vals, (rows, cols)), shape=(m_lp, N))
    Hh = sp.csr_matrix((hv, (hr, hcidx)), shape=(m_lp, m))

    A = program.A.tocoo()
    rows, cols, vals = list(A.row), list(A.col), list(A.data)
    br, bc, bv = [], [], []
    r = p
    for coef, hc in bld.eq:
        for j, v in coef.items():
            rows.append(r)
            cols.append(j)
            vals.append(v)
        for k, v in hc.items():
            br.append(r)
            bc.append(k)
            bv.append(-v)
        r += 1
    p_lp = r
    A_lp = sp.csr_matrix((vals, (rows, cols)), shape=(p_lp, N))
    Bh = sp.csr_matrix((bv, (br, bc)), shape=(p_lp, m))
    Bb = sp.csr_matrix((np.ones(p), (np.arange(p), np.arange(p))), shape=(p_lp, p))
    Hb = sp.csr_matrix((m_lp, p))
    if Q is not None:
        # rhs of the rotated program is Q h; fold Q into the maps
        Hh = (Hh @ Q).tocsr()
        Bh = (Bh @ Q).tocsr()

    c = np.concatenate([program.c, np.zeros(N - n)])
    names = tuple(program.names) + tuple(f"aux{k}" for k in range(N - n)) if program.names else ()
    lp = ConicProgram(
        c, A_lp, Bb @ source.b + Bh @ source.h, G_lp, Hb @ source.b + Hh @ source.h,
        ((NONNEG, m_lp),), names,
    )
    return PolyhedralProgram(lp, source, Bb, Bh, Hb, Hh, levels, (1 + tower_accuracy(levels)) ** depth - 1)
