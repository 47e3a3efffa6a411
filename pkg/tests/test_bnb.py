"""Branch-and-bound over cone relaxations.

What is proven here:
  * small textbook programs give the enumerated optimum
  * branching picks the most fractional column, lowest index on ties
  * infeasible programs and contradictory fixings are reported as infeasible
  * random mixed-binary programs match exhaustive enumeration
  * the search log and bound trace are consistent and deterministic
"""
from __future__ import annotations

import itertools

import numpy as np
import pytest
import scipy.sparse as sp

from dsplan.bnb import (MIP_INFEASIBLE, MIP_OPTIMAL, MixedIntegerProgram, SearchNode, branch, enumerate_binaries,
                        most_fractional, relax, solve_mip)
from dsplan.conic import NONNEG, SOC, ConicProgram


def linear_mip(c, G, h, lb, ub, integer, A=None, b=None):
    n = len(c)
    A = np.zeros((0, n)) if A is None else np.asarray(A, float)
    b = np.zeros(0) if b is None else np.asarray(b, float)
    prog = ConicProgram(np.asarray(c, float), sp.csr_matrix(A), b, sp.csr_matrix(np.asarray(G, float)),
                        np.asarray(h, float), ((NONNEG, len(h)),))
    return MixedIntegerProgram(prog, lb, ub, integer)


def test_knapsack_example():
    # max 3a + 2b, a + b <= 1, binary: enumeration of the four points gives 3
    mip = linear_mip([-3, -2], [[1, 1]], [1], [0, 0], [1, 1], [True, True])
    res = solve_mip(mip)
    assert res.status == MIP_OPTIMAL
    assert -res.objective == pytest.approx(3.0, abs=1e-6)
    assert np.round(res.x) == pytest.approx([1, 0])
    best = max(3 * a + 2 * b for a, b in itertools.product((0, 1), repeat=2) if a + b <= 1)
    assert best == 3


def test_integral_root_needs_no_branching():
    mip = linear_mip([1, 1], [[-1, 0], [0, -1]], [-1, 0], [0, 0], [1, 1], [True, True])
    res = solve_mip(mip)
    assert res.status == MIP_OPTIMAL and res.objective == pytest.approx(1.0, abs=1e-6)
    assert not any("branch" in line for line in res.log)


def test_contradictory_fixings_are_infeasible():
    # a >= 1 and a <= 0
    mip = linear_mip([1], [[-1], [1]], [-1, 0], [0], [1], [True])
    assert solve_mip(mip).status == MIP_INFEASIBLE
    assert relax(mip, np.array([1.0]), np.array([1.0])).status == "infeasible"


def test_branch_rules():
    node = SearchNode(0, -1, 0, np.zeros(2), np.ones(2), 0.0)
    integer = np.array([True, True])
    j, down, up = branch(node, np.array([0.5, 0.2]), integer, 1, 0.0)
    assert j == 0 and down.ub[0] == 0 and up.lb[0] == 1
    j, _, _ = branch(node, np.array([0.5, 0.5]), integer, 1, 0.0)
    assert j == 0
    j, _, _ = branch(node, np.array([0.1, 0.45]), integer, 1, 0.0)
    assert j == 1
    with pytest.raises(ValueError):
        branch(node, np.array([1.0, 0.0]), integer, 1, 0.0)
    assert most_fractional(np.array([0.3, 2.0]), np.array([False, True])) is None


def test_mip_validation():
    prog = ConicProgram(np.zeros(1), sp.csr_matrix((0, 1)), np.zeros(0), sp.csr_matrix((0, 1)), np.zeros(0), ())
    with pytest.raises(ValueError):
        MixedIntegerProgram(prog, [1.0], [0.0], [False])
    with pytest.raises(ValueError):
        MixedIntegerProgram(prog, [0.0], [np.inf], [True])


def random_program(seed: int):
    """Random mixed-binary program; pure binary ones go up to 12 columns.

    Conic ones couple binaries to a norm-bounded continuous part.
    """
    rng = np.random.default_rng(seed)
    conic = seed % 3 == 0
    nc = int(rng.integers(1, 4)) if seed % 3 != 2 else 0
    nb = int(rng.integers(2, 7 if nc else 13))
    n = nb + nc
    c = rng.normal(size=n)
    k = int(rng.integers(1, 4))
    Gk = rng.uniform(0, 1, size=(k, n))
    Gk[:, nb:] = rng.normal(size=(k, nc))
    hk = Gk[:, :nb].sum(axis=1) * rng.uniform(0.3, 0.7, k) + 0.5
    rows, h, cones = [Gk], [hk], [(NONNEG, k)]
    lb = np.concatenate([np.zeros(nb), -np.full(nc, 3.0)])
    ub = np.concatenate([np.ones(nb), np.full(nc, 3.0)])
    if conic and nc:
        # ||y|| <= 1 + sum of the first two binaries
        Gs = np.zeros((nc + 1, n))
        Gs[0, :2] = -1.0
        Gs[1:, nb:] = -np.eye(nc)
        rows.append(Gs)
        h.append(np.concatenate([[1.0], np.zeros(nc)]))
        cones.append((SOC, nc + 1))
    prog = ConicProgram(c, sp.csr_matrix((0, n)), np.zeros(0), sp.csr_matrix(np.vstack(rows)), np.concatenate(h),
                        tuple(cones))
    return MixedIntegerProgram(prog, lb, ub, np.arange(n) < nb)


@pytest.mark.parametrize("seed", range(12))
def test_matches_enumeration(seed):
    mip = random_program(seed)
    best, _ = enumerate_binaries(mip)
    res = solve_mip(mip, rel_gap=0.0)
    assert res.status == MIP_OPTIMAL
    assert res.objective == pytest.approx(best, abs=1e-6 * (1 + abs(best)))
    assert res.bound <= res.objective + 1e-6


def test_log_and_trace_are_deterministic():
    mip = random_program(4)
    a, b = solve_mip(mip), solve_mip(mip)
    assert a.log == b.log and a.objective == b.objective
    assert all(x <= y + 1e-9 for x, y in zip(a.bound_trace, a.bound_trace[1:]))
    nodes = [line.split() for line in a.log if not line.startswith("-")]
    assert nodes[0][:2] == ["0", "-1"]
    assert all(line.split()[-1] == "incumbent" for line in a.log if line.startswith("-"))


def test_warm_start_is_used():
    mip = linear_mip([-3, -2], [[1, 1]], [1], [0, 0], [1, 1], [True, True])
    res = solve_mip(mip, incumbent=np.array([0.0, 1.0]))
    assert any("warm-start" in line for line in res.log)
    assert -res.objective == pytest.approx(3.0, abs=1e-6)
