"""Multipliers of a parametric recourse program and the affine cut they define.

A recourse program depends on the first-stage vector x only through its
right-hand sides::

    min g'y  s.t.  E y = d0 - Ta x,   B y + s = h0 - Tg x,  s in K

With solver multipliers (theta, z) satisfying g + E'theta + B'z = 0 and
z in K*, weak duality gives for every x

    Q(x) >= -(d0 - Ta x)'theta - (h0 - Tg x)'z,

an affine minorant that is tight at the point where the program was solved.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cones import NONNEG
from .ipm import ConicSolution


class DualCheckError(RuntimeError):
    """Raised when extracted multipliers fail the stationarity or cone check."""


@dataclass
class DualSolution:
    theta: np.ndarray  # equality multipliers
    lam: np.ndarray  # multipliers of orthant rows whose rhs depends on x
    orthant: np.ndarray  # all orthant multipliers, row order of the program
    mu: np.ndarray  # leading entry of each cone block
    sigma: list  # remaining entries of each cone block
    stationarity: float

    @property
    def cone_violation(self) -> float:
        """max over blocks of ||sigma|| - mu (or the rotated analogue), and -min orthant."""
        worst = float(-np.min(self.orthant, initial=0.0))
        for m, s in zip(self.mu, self.sigma):
            worst = max(worst, float(np.linalg.norm(s) - m))
        return worst


@dataclass(frozen=True)
class AffineCut:
    """``value(x) = constant + coef @ x``."""
    constant: float
    coef: np.ndarray

    def value(self, x) -> float:
        return float(self.constant + self.coef @ np.asarray(x, float))

    def bounds(self, lb, ub):
        """Interval range of the affine function over the box [lb, ub]."""
        lo = self.constant + np.sum(np.where(self.coef > 0, self.coef * lb, self.coef * ub))
        hi = self.constant + np.sum(np.where(self.coef > 0, self.coef * ub, self.coef * lb))
        return float(lo), float(hi)


def affine_cut(y, z, d0, h0, Ta, Tg) -> AffineCut:
    constant = -float(d0 @ y + h0 @ z)
    coef = np.asarray(Ta.T @ y + Tg.T @ z).ravel()
    return AffineCut(constant, coef)


def extract_subproblem_duals(solution: ConicSolution, block, tol: float = 1e-6, program=None):
    """Split the multipliers of a solved recourse block and return ``(duals, J)``.

    ``block`` provides ``program``, ``Ta``, ``Tg``, ``d0`` and ``h0``;
    ``program`` is the instance actually solved when its right-hand sides
    differ from ``block.program``.  ``J`` is the dual objective of that
    instance.  Stationarity is checked against ``tol`` relative to the cost row.
    """
    if not solution.usable:
        raise DualCheckError(f"cannot extract multipliers from a {solution.status} solve")
    prog = program if program is not None else block.program
    y, z = solution.y, solution.z
    resid = prog.c + prog.A.T @ y + prog.G.T @ z
    stat = float(np.linalg.norm(resid) / max(1.0, np.linalg.norm(prog.c)))
    orth_idx, mu, sigma = [], [], []
    for kind, off, dim in prog.block_offsets():
        if kind == NONNEG:
            orth_idx.extend(range(off, off + dim))
        elif kind == "soc":
            mu.append(z[off])
            sigma.append(z[off + 1: off + dim])
        else:
            # rotated (a, b, c): 2ab >= ||c||^2  <=>  ||(c, (a-b)/sqrt2)|| <= (a+b)/sqrt2
            a, b = z[off], z[off + 1]
            mu.append((a + b) / np.sqrt(2.0))
            sigma.append(np.concatenate([z[off + 2: off + dim], [(a - b) / np.sqrt(2.0)]]))
    orth_idx = np.asarray(orth_idx, dtype=np.int64)
    linked = np.asarray(abs(block.Tg).sum(axis=1)).ravel() > 0
    duals = DualSolution(
        theta=y, lam=z[linked], orthant=z[orth_idx], mu=np.asarray(mu), sigma=sigma, stationarity=stat,
    )
    if stat > tol:
        raise DualCheckError(f"dual stationarity residual {stat:.2e} exceeds {tol:.1e}")
    if duals.cone_violation > tol * max(1.0, np.max(np.abs(z), initial=0.0)):
        raise DualCheckError(f"cone multipliers violate the dual cone by {duals.cone_violation:.2e}")
    J = -float(prog.b @ y + prog.h @ z)
    return duals, J


def opposing_rows(G, rows) -> np.ndarray:
    """Pairs ``(r, r')`` among ``rows`` of ``G`` whose coefficient rows are exact negatives."""
    G = G.tocsr()
    seen = {}
    pairs = []
    for r in rows:
        lo, hi = G.indptr[r], G.indptr[r + 1]
        key = (tuple(G.indices[lo:hi]), tuple(G.data[lo:hi]))
        neg = (key[0], tuple(-v for v in key[1]))
        if neg in seen and seen[neg]:
            pairs.append((seen[neg].pop(), r))
        else:
            seen.setdefault(key, []).append(r)
    return np.asarray(pairs, dtype=np.int64).reshape(-1, 2)


def reduce_opposing(z, pairs) -> np.ndarray:
    """Remove the common part of the multipliers of opposite row pairs.

    The two rows cancel in the stationarity condition, so subtracting
    ``min(z_r, z_r')`` from both keeps the multipliers dual feasible, and
    since ``h_r + h_r' >= 0`` the dual objective does not decrease.  When
    both rows are tight with zero width (as for copies of a switched-off
    branch) interior-point multipliers grow along this free direction; the
    reduction removes it and with it the spurious slope of the cut.
    """
    z = np.array(z, float)
    if len(pairs):
        d = np.maximum(np.minimum(z[pairs[:, 0]], z[pairs[:, 1]]), 0.0)
        np.subtract.at(z, pairs[:, 0], d)
        np.subtract.at(z, pairs[:, 1], d)
    return z
