"""Planning model rows, recourse blocks, extensive forms and plan evaluation.

What is proven here:
  * first-stage and recourse rows carry the expected coefficients and tags
  * switching a branch off pins its voltage copies and flows to zero
  * zero demand admits a flat-voltage point of zero recourse cost
  * full curtailment costs the closed-form penalty on all demand
  * the stochastic extensive form is exactly the stacked block rows
  * chance-mode budget and epsilon edge cases
  * radiality verdicts on trees, cycles and empty plans
"""
from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest

from dsplan.extensive import solve_extensive
from dsplan.formulation import (CHANCE, CHANCE_BIGM, ROW_TAGS, STOCHASTIC, ChanceBudgetError, FirstStagePlan,
                                build_all_recourse, build_extensive, build_first_stage, build_recourse,
                                canonical_hash, canonical_rows, check_radiality, evaluate_plan, extensive_rows,
                                first_stage_feasible, recourse_cost_from_values, recourse_floor, solve_recourse)
from dsplan.network import (Branch, EconomicData, Instance, Network, Node, Substation, TimeBlock, equiprobable,
                            load_bundled)
from planning import random_feasible_point, tree_point

SQRT2 = math.sqrt(2.0)
BASE_TREE = ["1-2", "2-3", "2-4", "2-5"]


def two_node(g=1.0, b=-2.0, b_sh=0.0, demand=0.5):
    nodes = [Node(1), Node(2, demand, demand * 0.4843, 0.9, 0.9, 1.05)]
    net = Network(nodes, [Substation(1, 5.0, 5.0, 0.9, 1000.0, 10.0)],
                  [Branch(1, 2, "existing", g, b, b_sh, 1.0, i_max_existing=2.0, maintenance_cost=0.1)])
    return Instance(net, equiprobable([1.0]), EconomicData(), (TimeBlock(1000.0, 1.0, 50.0),)).validate()


def rows_with(fs, tag, matrix="A"):
    M = (fs.A if matrix == "A" else fs.G).tocsr()
    tags = fs.eq_tags if matrix == "A" else fs.le_tags
    names = fs.index.names
    out = []
    for r, t in enumerate(tags):
        if t == tag:
            row = M.getrow(r)
            out.append(({names[j]: v for j, v in zip(row.indices, row.data)}, (fs.b if matrix == "A" else fs.h)[r]))
    return out


def test_replacement_rows(bundled_model):
    _, fs, _ = bundled_model
    rows = rows_with(fs, "replacement-exclusive")
    assert len(rows) == 5
    assert ({"k[1-2]": 1.0, "f[1-2]": 1.0}, 1.0) in rows


def test_substation_has_no_parent(bundled_model):
    _, fs, _ = bundled_model
    rows = rows_with(fs, "substation-no-parent")
    assert sorted(next(iter(r)) for r, _ in rows) == ["z[1,2]"]
    assert all(rhs == 0 for _, rhs in rows)


def test_single_parent_row_with_two_coefficients():
    nodes = [Node(1), Node(2), Node(3, 0.1)]
    net = Network(nodes, [Substation(1, 1, 1, 0.9, 0, 0), Substation(2, 1, 1, 0.9, 0, 0)],
                  [Branch(1, 3, "existing", 1, -2, i_max_existing=1), Branch(2, 3, "existing", 1, -2, i_max_existing=1)])
    inst = Instance(net, equiprobable([1.0]), EconomicData(), (TimeBlock(10, 1, 1),)).validate()
    rows = rows_with(build_first_stage(inst), "single-parent")
    assert rows == [({"z[3,1]": 1.0, "z[3,2]": 1.0}, 1.0)]


def test_cost_row(bundled_model):
    inst, fs, _ = bundled_model
    idx, crf = fs.index, inst.economics.crf
    assert fs.capital[idx["v_sub[1]"]] == pytest.approx(crf * 200_000)
    assert fs.capital[idx["S_sub[1]"]] == pytest.approx(crf * 50_000 * 10)  # $/MW times the MVA base
    assert fs.capital[idx["k[5-4]"]] == pytest.approx(crf * 150_000 * 1.1)
    assert fs.maintenance[idx["y[1-2]"]] == pytest.approx(8760 * 0.05137, rel=1e-4)
    assert np.allclose(fs.c, fs.capital + fs.maintenance)


def test_flow_row_coefficients():
    inst = two_node(g=1.0, b=-2.0)
    blk = build_recourse(inst, 0, 0)
    E = blk.program.A.tocsr()
    r = blk.eq_tags.index("active-flow")
    row = dict(zip((blk.names[j] for j in E.getrow(r).indices), E.getrow(r).data))
    assert row["u_copy[1|1-2]"] == pytest.approx(SQRT2)
    assert row["R[1-2]"] == pytest.approx(-1.0)
    assert row["L[1-2]"] == pytest.approx(2.0)
    assert row["P[1,2]"] == -1.0


def test_open_branch_pins_copies(tiny):
    fs = build_first_stage(tiny)
    blk = build_recourse(tiny, 0, 0, fs.index)
    x = tree_point(tiny, fs, ["1-2", "2-3", "2-4", "2-5"])
    prog, sol = solve_recourse(blk, x)
    v = dict(zip(blk.names, sol.x))
    # 3-4 is open: its voltage copies, cosine/sine products and flows vanish
    for name in ("u_copy[3|3-4]", "u_copy[4|3-4]", "R[3-4]", "L[3-4]", "P[3,4]", "Q[4,3]"):
        assert abs(v[name]) < 1e-5
    # the copy-gap row allows u - u_copy up to vmax^2/sqrt2 when y = 0
    tags = blk.le_tags
    h = prog.h
    gap_rows = [r for r, t in enumerate(tags) if t == "copy-gap-upper"]
    assert any(h[r] == pytest.approx(1.05 ** 2 / SQRT2) for r in gap_rows)


def zero_demand(inst):
    """Same network with no load and no line charging."""
    nodes = tuple(replace(n, p_demand=0.0, q_demand=0.0) for n in inst.network.nodes)
    branches = tuple(replace(br, b_sh=0.0) for br in inst.network.branches)
    return replace(inst, network=replace(inst.network, nodes=nodes, branches=branches))


def test_zero_demand_flat_voltage_point(tiny):
    inst = zero_demand(tiny)
    fs = build_first_stage(inst)
    blk = build_recourse(inst, 0, 0, fs.index)
    x = tree_point(inst, fs, BASE_TREE)
    prog = blk.program_at(x)
    col = {n: k for k, n in enumerate(blk.names)}
    # [DERIVED] candidate point: flat voltage, no flow, no curtailment; every row is checked
    p = np.zeros(prog.n)
    for nd in inst.network.nodes:
        p[col[f"u[{nd.id}]"]] = 1 / SQRT2
    for br in inst.network.branches:
        if br.label in BASE_TREE:
            p[col[f"u_copy[{br.start}|{br.label}]"]] = p[col[f"u_copy[{br.end}|{br.label}]"]] = 1 / SQRT2
            p[col[f"R[{br.label}]"]] = 1.0
    assert prog.is_feasible(p, tol=1e-9)
    assert prog.c @ p == 0.0
    _, sol = solve_recourse(blk, x)
    scale = np.abs(prog.c).max()  # $ per pu of injection over the block
    assert sol.primal_objective == pytest.approx(0.0, abs=1e-8 * scale)
    ev = evaluate_plan(inst, x, fs=fs)
    assert ev.operation[0] == pytest.approx(ev.maintenance, abs=1e-8 * scale)
    assert ev.maintenance == pytest.approx(sum(fs.maintenance[fs.index[f"y[{b}]"]] for b in BASE_TREE))


def test_full_curtailment_cost(tiny):
    fs = build_first_stage(tiny)
    x = np.zeros(len(fs.index))  # everything open
    ev = evaluate_plan(tiny, x, fs=fs)
    t = tiny.time_blocks[0]
    pd, _ = tiny.demand(0, 0)
    expected = t.duration * tiny.network.base_mva * tiny.penalty_cost(0, 0) * pd.sum()
    assert ev.recourse[0] == pytest.approx(expected, rel=1e-6)
    assert ev.total == pytest.approx(expected, rel=1e-6)


def test_cost_recomputed_from_primitives(tiny):
    fs = build_first_stage(tiny)
    x = tree_point(tiny, fs, BASE_TREE)
    ev = evaluate_plan(tiny, x, fs=fs, keep_solutions=True)
    sol = ev.solutions[0]
    assert recourse_cost_from_values(tiny, 0, 0, sol.values) == pytest.approx(sol.objective, rel=1e-9)
    assert recourse_floor(tiny, 0) <= sol.objective + 1e-6


def test_doubling_penalty_without_curtailment_keeps_cost(tiny):
    fs = build_first_stage(tiny)
    x = tree_point(tiny, fs, BASE_TREE, invest={"1-2": 1, "2-3": 1, "2-4": 1, "2-5": 1})
    a = evaluate_plan(tiny, x, fs=fs, keep_solutions=True)
    assert max(v for k, v in a.solutions[0].values.items() if k.startswith("r[")) < 1e-6
    doubled = replace(tiny, economics=replace(tiny.economics, penalty_multiplier=20.0))
    b = evaluate_plan(doubled, x)
    assert b.total == pytest.approx(a.total, rel=1e-6)


def test_row_tags_cover_the_model(bundled_model, small_model):
    emitted = set()
    # the bundled data has no existing-only branch and the random one no capacitor
    for _, fs, blocks in (bundled_model, small_model):
        emitted |= set(fs.eq_tags) | set(fs.le_tags)
        for blk in blocks[0]:
            emitted |= set(blk.eq_tags) | set(blk.le_tags)
    assert emitted == set(ROW_TAGS)


def test_stochastic_extensive_is_stacked_blocks(small_model):
    inst, fs, blocks = small_model
    model = build_extensive(inst, STOCHASTIC, fs=fs, blocks=blocks)
    assert canonical_hash(extensive_rows(model, fs, blocks)) == canonical_hash(canonical_rows(fs, blocks))
    probs = inst.scenarios.probabilities
    for s, t, sl in model.block_slices:
        assert np.allclose(model.program.c[sl], probs[s] * blocks[s][t].program.c)


def test_budget_row_ten_scenarios(bundled_model):
    inst, fs, blocks = bundled_model
    model = build_extensive(inst, CHANCE, epsilon=0.2, fs=fs, blocks=blocks)
    r = model.le_tags.index("chance-budget")
    row = model.program.G.tocsr().getrow(r)
    assert sorted(row.indices) == sorted(model.w)
    assert np.allclose(row.data, 0.1)
    assert model.program.h[r] == pytest.approx(0.2)
    assert np.all(model.integer[model.w]) and np.all(model.ub[model.w] == 1)


def test_single_scenario_epsilon_zero_fixes_indicator(tiny):
    model = build_extensive(tiny, CHANCE, epsilon=0.0)
    assert len(model.w) == 1 and model.ub[model.w[0]] == 0 and model.lb[model.w[0]] == 0


def test_chance_budget_errors(tiny):
    with pytest.raises(ChanceBudgetError, match="chance budget empties scenario set"):
        build_extensive(tiny, CHANCE, epsilon=1.0)
    with pytest.raises(ValueError):
        build_extensive(tiny, CHANCE, rho=0.0)
    with pytest.raises(ValueError):
        build_extensive(tiny, "robust")


def test_stochastic_equals_chance_at_zero_epsilon(small):
    a = solve_extensive(small, STOCHASTIC).report.objective["total"]
    b = solve_extensive(small, CHANCE, epsilon=0.0).report.objective["total"]
    assert b == pytest.approx(a, rel=1e-3)


def test_big_m_chance_model_builds(tiny):
    model = build_extensive(tiny, CHANCE_BIGM, epsilon=0.0, big_m=100.0)
    assert model.program.A.shape[0] == build_first_stage(tiny).A.shape[0]


def test_radiality_spanning_tree(bundled_model):
    inst, fs, _ = bundled_model
    rng = np.random.default_rng(0)
    for _ in range(10):
        x = random_feasible_point(inst, fs, rng)
        verdict = check_radiality(FirstStagePlan.from_vector(x, fs.index), inst.network)
        assert verdict.ok and not verdict.warnings


def test_radiality_three_cycle(bundled_model):
    inst, fs, _ = bundled_model
    x = tree_point(inst, fs, ["2-3", "3-4", "2-4", "2-5"])
    plan = FirstStagePlan.from_vector(x, fs.index)
    # rebuild the orientation as a directed cycle 3 <- 2 <- 4 <- 3 with 5 under 2
    plan.z = {k: 0 for k in plan.z}
    plan.z.update({(3, 2): 1, (4, 3): 1, (2, 4): 1, (5, 2): 1})
    verdict = check_radiality(plan, inst.network)
    assert not verdict.ok
    assert not any("parents" in v for v in verdict.violations)
    assert "cycle among nodes [2, 3, 4, 5]" in verdict.violations
    assert not first_stage_feasible(fs, plan.to_vector(fs.index))


def test_radiality_empty_plan(bundled_model):
    inst, fs, _ = bundled_model
    plan = FirstStagePlan.from_vector(np.zeros(len(fs.index)), fs.index)
    verdict = check_radiality(plan, inst.network)
    assert verdict.ok
    assert verdict.warnings == [f"isolated node {i}" for i in (2, 3, 4, 5)]


def test_plan_vector_round_trip(bundled_model):
    inst, fs, _ = bundled_model
    x = random_feasible_point(inst, fs, np.random.default_rng(3))
    assert np.allclose(FirstStagePlan.from_vector(x, fs.index).to_vector(fs.index), x)


def test_bundled_rebuild_is_deterministic():
    a, b = load_bundled(), load_bundled()
    fa, fb = build_first_stage(a), build_first_stage(b)
    assert canonical_hash(canonical_rows(fa, build_all_recourse(a, fa.index))) == \
        canonical_hash(canonical_rows(fb, build_all_recourse(b, fb.index)))
