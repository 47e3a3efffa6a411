"""Instance data: annuities, scenario sets, validation, file round trip, topology checks.

What is proven here:
  * the capital recovery factor matches an exact rational evaluation
  * generated scenario sets are equiprobable, seeded and uniformly spread
  * every malformed document is rejected with a message naming the problem
  * dump/load is lossless on the bundled instance
  * topology diagnostics report reachability and the upgrade options
"""
from __future__ import annotations

import copy
import json
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from dsplan.network import (InstanceError, Network, Node, Substation, Branch, capital_recovery_factor,
                            dump_instance, equiprobable, generate_scenarios, instance_to_dict, load_instance,
                            parse_instance, validate_topology)


def exact_crf(rate: Fraction, years: int) -> Fraction:
    g = (1 + rate) ** years
    return rate * g / (g - 1)


def test_crf_matches_rational_oracle():
    # [DERIVED] exact rational arithmetic, independent of the float implementation
    oracle = exact_crf(Fraction(1, 10), 15)
    assert capital_recovery_factor(0.10, 15) == pytest.approx(float(oracle), rel=1e-14)
    assert capital_recovery_factor(0.10, 15) == pytest.approx(0.1314737776, abs=1e-9)
    assert 200_000 * capital_recovery_factor(0.10, 15) == pytest.approx(26294.76, abs=0.01)


def test_crf_zero_rate_and_one_year():
    assert capital_recovery_factor(0.0, 20) == pytest.approx(1 / 20)
    assert capital_recovery_factor(0.07, 1) == pytest.approx(1.07)
    with pytest.raises(ValueError):
        capital_recovery_factor(0.1, 0)


@given(st.fractions(min_value=Fraction(1, 1000), max_value=Fraction(1, 2), max_denominator=1000),
       st.integers(1, 40))
@settings(max_examples=60, deadline=None)
def test_crf_property(rate, years):
    v = capital_recovery_factor(float(rate), years)
    assert v == pytest.approx(float(exact_crf(rate, years)), rel=1e-10)
    # an annuity always exceeds both the interest and the straight-line repayment
    assert v > float(rate) and v >= 1 / years - 1e-15


def test_generated_scenarios_seeded_and_equiprobable():
    a = generate_scenarios(7, 0.6, 1.8, seed=3)
    b = generate_scenarios(7, 0.6, 1.8, seed=3)
    c = generate_scenarios(7, 0.6, 1.8, seed=4)
    assert a == b and a != c
    assert a.ids == list(range(1, 8))
    assert np.allclose(a.probabilities, 1 / 7)
    assert np.all((a.factors >= 0.6) & (a.factors <= 1.8))
    a.validate()


def test_generated_factors_are_uniform():
    f = generate_scenarios(4000, 0.6, 1.8, seed=11).factors
    assert stats.kstest((f - 0.6) / 1.2, "uniform").pvalue > 1e-3


def test_degenerate_range_gives_constant_factors():
    assert np.all(generate_scenarios(3, 1.5, 1.5, 0).factors == 1.5)
    with pytest.raises(ValueError):
        generate_scenarios(0, 0.6, 1.8, 0)


def test_equiprobable():
    sc = equiprobable([1.0, 2.0, 3.0, 4.0])
    assert np.allclose(sc.probabilities, 0.25) and list(sc.factors) == [1, 2, 3, 4]


def test_bundled_instance(bundled):
    net = bundled.network
    assert len(net.nodes) == 5 and net.substation_nodes == [1]
    assert len(net.branches) == 7 and len(net.capacitors) == 2
    assert len(bundled.scenarios) == 10 and len(bundled.time_blocks) == 3
    assert bundled.economics.crf == pytest.approx(float(exact_crf(Fraction(1, 10), 15)))
    # q derived from the power factor
    n2 = net.node(2)
    assert n2.q_demand == pytest.approx(n2.p_demand * math.tan(math.acos(0.9)))


def test_derived_prices(bundled):
    # loss price = multiplier * factor * block price; penalty = multiplier * loss price
    s, t = 2, 1
    f = bundled.scenarios[s].factor
    assert bundled.loss_cost(t, s) == pytest.approx(10 * f * 70)
    assert bundled.penalty_cost(t, s) == pytest.approx(100 * f * 70)
    p, _ = bundled.demand(t, s)
    assert p[1] == pytest.approx(0.1 * 0.8 * f)  # 1 MW on a 10 MVA base


def test_round_trip(bundled, tmp_path):
    path = tmp_path / "inst.json"
    dump_instance(bundled, path)
    again = load_instance(path)
    assert again == bundled
    assert instance_to_dict(again) == instance_to_dict(bundled)


def _doc(bundled):
    return copy.deepcopy(instance_to_dict(bundled))


@pytest.mark.parametrize("mutate, message", [
    (lambda d: d["scenarios"][0].update(probability=0.2), "probabilities do not sum to 1"),
    (lambda d: d.update(branches=[]), "no branches"),
    (lambda d: d["branches"][0].update(kind="overhead"), "kind must be one of"),
    (lambda d: d["branches"][0].update(to=99), "endpoint"),
    (lambda d: d["nodes"][1].update(v_min=1.1), "v_min must be below v_max"),
    (lambda d: d["time_blocks"][0].update(duration=9000), "exceed 8760"),
    (lambda d: d["scenarios"][0].update(probability=-0.1), "probability must be positive"),
    (lambda d: d["branches"][5].update(i_max_existing=0.3), "existing rating"),
    (lambda d: d.pop("economics"), "economics"),
])
def test_validation_errors(bundled, mutate, message):
    d = _doc(bundled)
    mutate(d)
    with pytest.raises(InstanceError, match=message):
        parse_instance(d)


def test_generate_block_in_file(bundled):
    d = _doc(bundled)
    d["scenarios"] = {"generate": {"count": 4, "low": 0.6, "high": 1.8, "seed": 5}}
    inst = parse_instance(json.loads(json.dumps(d)))
    assert inst.scenarios == generate_scenarios(4, 0.6, 1.8, 5)


def test_topology_diagnostics_bundled(bundled):
    diag = validate_topology(bundled.network)
    assert diag.connected and diag.unreachable == [] and diag.issues == []
    assert diag.replacement_pairs == ["1-2", "2-3", "2-4", "2-5", "3-4"]
    assert diag.new_routes == ["5-4", "3-5"]


def test_topology_diagnostics_unreachable():
    nodes = [Node(1), Node(2, 0.1), Node(3, 0.1), Node(4, 0.1)]
    net = Network(nodes, [Substation(1, 1, 1, 0.9, 0, 0)],
                  [Branch(1, 2, "existing", 1, -2, i_max_existing=1.0),
                   Branch(3, 4, "existing", 1, -2, i_max_existing=1.0)])
    diag = validate_topology(net)
    assert not diag.connected and diag.unreachable == [3, 4]
    assert "node 3 unreachable from every substation" in diag.issues
