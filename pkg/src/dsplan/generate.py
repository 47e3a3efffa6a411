"""Random small planning instances for property and equivalence testing."""
from __future__ import annotations

import numpy as np

from .network import Instance, parse_instance

# rows of (duration h, load factor, price $/MWh) in the style of the bundled data
BLOCK_MENU = ((2000.0, 0.65, 60.0), (5760.0, 0.8, 70.0), (1000.0, 1.0, 90.0))


def random_instance_data(seed: int, nodes: tuple = (4, 6), scenarios: tuple = (2, 5), blocks: tuple = (1, 2),
                         candidates: int = 1, replacements: int = 1) -> dict:
    """Instance document: a random feeder tree plus a few upgrade and new-route options.

    Node 1 is the substation.  Existing branches form a random tree; up to
    ``replacements`` of them may be re-conductored and ``candidates`` new
    routes close loops.  Scenario factors are uniform on [0.6, 1.8].
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(nodes[0], nodes[1] + 1))
    S = int(rng.integers(scenarios[0], scenarios[1] + 1))
    T = int(rng.integers(blocks[0], blocks[1] + 1))

    node_docs = [{"id": 1, "p_demand": 0.0, "q_demand": 0.0, "v_min": 0.95, "v_max": 1.05}]
    for i in range(2, n + 1):
        node_docs.append({"id": i, "p_demand": round(float(rng.uniform(0.3, 1.0)), 3), "power_factor": 0.9,
                          "v_min": 0.9, "v_max": 1.05})
    load = sum(d["p_demand"] for d in node_docs)

    def line(a, b, kind):
        length = round(float(rng.uniform(0.5, 2.0)), 2)
        g, bb = 6.0 / length, -12.0 / length
        doc = {"from": a, "to": b, "kind": kind, "g": round(g, 4), "b": round(bb, 4), "b_sh": 0.001,
               "length": length, "maintenance_cost": 0.05}
        if kind in ("existing", "replacement"):
            doc["i_max_existing"] = round(float(rng.uniform(0.5, 1.0)) * load / 10.0 * 1.2, 4)
        if kind in ("candidate", "replacement"):
            doc["i_max_candidate"] = round(load / 10.0 * 2.0, 4)
            doc["fixed_cost"] = float(rng.integers(5, 20)) * 10000.0
            doc["variable_cost"] = 20000.0
        return doc

    tree = [(int(rng.integers(1, i)), i) for i in range(2, n + 1)]
    upgrade = set(rng.choice(len(tree), size=min(replacements, len(tree)), replace=False).tolist())
    branch_docs = [line(a, b, "replacement" if k in upgrade else "existing") for k, (a, b) in enumerate(tree)]
    present = {frozenset(e) for e in tree}
    options = [(a, b) for a in range(2, n + 1) for b in range(a + 1, n + 1) if frozenset((a, b)) not in present]
    for k in rng.permutation(len(options))[:candidates]:
        branch_docs.append(line(*options[int(k)], "candidate"))

    picks = sorted(rng.choice(len(BLOCK_MENU), size=T, replace=False).tolist())
    block_docs = [{"duration": BLOCK_MENU[k][0], "load_factor": BLOCK_MENU[k][1], "price": BLOCK_MENU[k][2]}
                  for k in picks]

    factors = rng.uniform(0.6, 1.8, size=S)
    return {
        "name": f"random-{seed}",
        "base": {"mva": 10.0, "kv": 12.66},
        "nodes": node_docs,
        "substations": [{"node": 1, "p_max": round(load * 1.2, 3), "q_max": round(load, 3), "power_factor": 0.9,
                         "fixed_cost": 200000.0, "variable_cost": 50000.0}],
        "branches": branch_docs,
        "capacitors": [],
        "time_blocks": block_docs,
        "scenarios": [{"id": s + 1, "probability": 1.0 / S, "factor": round(float(f), 4)}
                      for s, f in enumerate(factors)],
        "economics": {"interest_rate": 0.10, "lifespan": 15, "penalty_multiplier": 10.0, "loss_multiplier": 10.0},
    }


def random_instance(seed: int, **kwargs) -> Instance:
    return parse_instance(random_instance_data(seed, **kwargs))
