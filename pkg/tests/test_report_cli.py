"""Reports, topology export, comparison tables and the command line.

What is proven here:
  * report totals add up and the JSON form is deterministic and finite-safe
  * every conductor state of the DOT export is produced, including replacements
  * limit hits and errors show up in the comparison table
  * the CLI maps usage errors to status 1 and writes its files
"""
from __future__ import annotations

import csv
import json
import math

import numpy as np
import pytest

from dsplan import cli
from dsplan.benders import RunConfig, run_with_state
from dsplan.formulation import FirstStagePlan, evaluate_plan
from dsplan.network import EXISTING, REPLACEMENT
from dsplan.report import (INVESTED, KEPT, REMOVED, REPLACED, STATUS_LIMIT, comparison_rows, error_report, export_topology,
                           format_table, topology_edges)

from planning import random_spanning_tree, tree_point


@pytest.fixture(scope="module")
def small_report(small_model):
    inst, fs, blocks = small_model
    return run_with_state(RunConfig(), inst, fs, blocks)[0]


def test_totals_add_up(small, small_report):
    obj = small_report.objective
    assert obj["total"] == pytest.approx(obj["investment"] + obj["expected_operation"], rel=1e-12)
    pi = small.scenarios.probabilities
    costs = np.array([small_report.scenario_costs[str(i)] for i in small.scenarios.ids])
    assert obj["expected_operation"] == pytest.approx(float(pi @ costs), rel=1e-9)
    assert small_report.discarded == [] and small_report.master_discarded == []


def test_reported_plan_reproduces_objective(small_model, small_report):
    inst, fs, blocks = small_model
    x = np.zeros(len(fs.index))
    for name, v in small_report.plan.items():
        x[fs.index[name]] = v
    assert evaluate_plan(inst, x, blocks, fs).total == pytest.approx(small_report.objective["total"], rel=1e-6)


def test_report_json_round_trip(small_report):
    d = json.loads(small_report.to_json(timing=False))
    assert "timings" not in d
    assert d == small_report.to_dict(timing=False)
    assert "timings" in small_report.to_dict()


def test_error_report_is_json_safe():
    rep = error_report("stochastic", "benders", 0.0, 1.0, 1e-3, "boom")
    d = json.loads(rep.to_json())
    assert d["gap"] == "inf" and d["objective"]["total"] == "nan" and d["status"] == "error"


def replacement_plan(inst, fs):
    label = next(br.label for br in inst.network.branches if br.kind == REPLACEMENT)
    x = tree_point(inst, fs, random_spanning_tree(inst, np.random.default_rng(0)), invest={label: 1})
    return label, FirstStagePlan.from_vector(x, fs.index)


def test_replacement_draws_two_edges(bundled_model):
    inst, fs, _ = bundled_model
    label, plan = replacement_plan(inst, fs)
    states = [e[3] for e in topology_edges(inst, plan) if e[2] == label]
    assert sorted(states) == sorted([REPLACED, INVESTED])
    dot = export_topology(plan, inst, "t")
    assert dot.startswith('graph "t" {') and dot.rstrip().endswith("}")
    assert f'branch="{label}", state="{REPLACED}"' in dot
    assert f'branch="{label}", state="{INVESTED}"' in dot


def test_empty_plan_keeps_existing_edges(bundled_model):
    inst, fs, _ = bundled_model
    x = np.zeros(len(fs.index))
    for br in inst.network.branches:
        if br.has_existing:
            x[fs.index[f"f[{br.label}]"]] = 1
    edges = topology_edges(inst, FirstStagePlan.from_vector(x, fs.index))
    assert {e[3] for e in edges} == {KEPT}
    assert len(edges) == sum(br.has_existing for br in inst.network.branches)


def test_removed_existing_branch(small_model):
    inst, fs, _ = small_model
    x = np.zeros(len(fs.index))
    existing = [br.label for br in inst.network.branches if br.kind == EXISTING]
    states = {e[2]: e[3] for e in topology_edges(inst, FirstStagePlan.from_vector(x, fs.index))}
    assert all(states[label] == REMOVED for label in existing)


def test_unbuilt_candidates_are_omitted(bundled_model):
    inst, fs, _ = bundled_model
    x = tree_point(inst, fs, random_spanning_tree(inst, np.random.default_rng(3)))
    plan = FirstStagePlan.from_vector(x, fs.index)
    drawn = {e[2] for e in topology_edges(inst, plan)}
    for br in inst.network.branches:
        assert (br.label in drawn) == (br.has_existing or bool(plan.k.get(br.label, 0)))
    kept = [e for e in topology_edges(inst, plan) if e[3] == KEPT]
    assert all(e[4] == bool(plan.y[e[2]]) for e in kept)


def test_comparison_table_marks_limits(small_report):
    limited = error_report("stochastic", "x", 0.0, 1.0, 1e-3, "")
    limited.status, limited.gap = STATUS_LIMIT, 0.0123
    limited.objective = dict(small_report.objective)
    limited.timings = {"wall": 1.5}
    rows = comparison_rows({"ok": small_report, "slow": limited,
                            "bad": error_report("stochastic", "y", 0.0, 1.0, 1e-3, "failed")})
    assert [r["status"] for r in rows] == ["optimal", "T", "error"]
    table = format_table(rows)
    assert "1.2300%" in table and "N/A" in table
    lines = table.strip().splitlines()
    assert lines[0].split() == ["method", "status", "objective", "iterations", "time", "gap"]
    assert len(lines) == 2 + len(rows)
    assert lines[3].split()[:2] == ["slow", "T"]


# -- command line ---------------------------------------------------------------------

def test_epsilon_requires_chance_mode(tmp_path, capsys):
    code = cli.main(["solve", "--epsilon", "0.1", "--out", str(tmp_path)])
    assert code == 1
    assert "epsilon requires --mode chance" in capsys.readouterr().err
    assert not (tmp_path / "report.json").exists()


@pytest.mark.parametrize("argv", [["solve", "--bogus"], ["solve", "--tolerance", "0"], ["frobnicate"],
                                  ["solve", "--mode", "nope"]])
def test_usage_errors_exit_one(argv, capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(argv)
    assert exc.value.code == 1


def test_missing_instance_file(tmp_path, capsys):
    assert cli.main(["solve", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 1


@pytest.fixture(scope="module")
def deterministic_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("det")
    code = cli.main(["solve", "--mode", "deterministic", "--out", str(out)])
    return code, out


def test_deterministic_solve_writes_outputs(deterministic_run):
    code, out = deterministic_run
    assert code == 0
    for name in ("report.json", "scenario_costs.csv", "bounds.csv", "topology.dot", "bounds.png", "topology.png"):
        assert (out / name).stat().st_size > 0, name
    rep = json.loads((out / "report.json").read_text())
    assert rep["mode"] == "deterministic" and rep["status"] == "optimal"
    with open(out / "scenario_costs.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 1 and rows[0]["discarded"] == "0"
    assert float(rows[0]["cost"]) == pytest.approx(rep["scenario_costs"][rows[0]["scenario"]], rel=1e-9)
    with open(out / "bounds.csv") as fh:
        bounds = list(csv.DictReader(fh))
    assert [int(b["iteration"]) for b in bounds] == list(range(1, len(bounds) + 1))
    assert (out / "bounds.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_cli_runs_are_deterministic(deterministic_run, tmp_path):
    _, out = deterministic_run
    assert cli.main(["solve", "--mode", "deterministic", "--no-figures", "--out", str(tmp_path)]) == 0
    a = json.loads((out / "report.json").read_text())
    b = json.loads((tmp_path / "report.json").read_text())
    a.pop("timings"), b.pop("timings")
    assert a == b
    assert not (tmp_path / "bounds.png").exists()
    assert (out / "topology.dot").read_text() == (tmp_path / "topology.dot").read_text()


def test_iteration_limit_exits_two(tmp_path):
    code = cli.main(["solve", "--mode", "deterministic", "--max-iters", "1", "--no-figures", "--out", str(tmp_path)])
    rep = json.loads((tmp_path / "report.json").read_text())
    assert code == (0 if rep["status"] == "optimal" else 2)
    assert rep["iterations"] == 1
    assert math.isfinite(rep["objective"]["total"])
