"""Planning-instance data model: network, time blocks, scenarios, economics.

Instances are read from JSON (schema in ``docs/formats.md``).  Demands
and capacities arrive in MW/MVAr/kVAr and are converted to per-unit on the
instance base; costs stay in dollars.
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

EXISTING = "existing"
CANDIDATE = "candidate"
REPLACEMENT = "replacement"
BRANCH_KINDS = (EXISTING, CANDIDATE, REPLACEMENT)

PROBABILITY_TOL = 1e-12


class InstanceError(ValueError):
    """Raised when an instance file cannot be parsed or violates an invariant."""


@dataclass(frozen=True)
class Node:
    id: int
    p_demand: float = 0.0  # pu
    q_demand: float = 0.0  # pu
    power_factor: float = 1.0
    v_min: float = 0.95
    v_max: float = 1.05

    @property
    def beta(self) -> float:
        return math.tan(math.acos(self.power_factor))


@dataclass(frozen=True)
class Substation:
    node: int
    p_max: float  # pu
    q_max: float  # pu
    power_factor: float
    fixed_cost: float  # $ (capital)
    variable_cost: float  # $/MW (capital)


@dataclass(frozen=True)
class CapacitorSite:
    node: int
    q_max_kvar: float
    fixed_cost: float  # $
    variable_cost: float  # $/kVAr
    operating_cost: float = 0.0  # $/h while installed


@dataclass(frozen=True)
class Branch:
    start: int
    end: int
    kind: str
    g: float
    b: float
    b_sh: float = 0.0
    length: float = 1.0  # km
    i_max_existing: float = 0.0  # pu current
    i_max_candidate: float = 0.0
    fixed_cost: float = 0.0  # $/km (capital)
    variable_cost: float = 0.0  # accepted for completeness, not priced
    maintenance_cost: float = 0.0  # $/h while connected

    @property
    def label(self) -> str:
        return f"{self.start}-{self.end}"

    @property
    def has_existing(self) -> bool:
        return self.kind in (EXISTING, REPLACEMENT)

    @property
    def has_candidate(self) -> bool:
        return self.kind in (CANDIDATE, REPLACEMENT)


@dataclass(frozen=True)
class TimeBlock:
    duration: float  # hours
    load_factor: float
    price: float  # $/MWh


@dataclass(frozen=True)
class Scenario:
    id: int
    probability: float
    factor: float


@dataclass(frozen=True)
class ScenarioSet:
    scenarios: tuple

    def __post_init__(self):
        object.__setattr__(self, "scenarios", tuple(self.scenarios))

    def __len__(self):
        return len(self.scenarios)

    def __iter__(self):
        return iter(self.scenarios)

    def __getitem__(self, i):
        return self.scenarios[i]

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([s.probability for s in self.scenarios])

    @property
    def factors(self) -> np.ndarray:
        return np.array([s.factor for s in self.scenarios])

    @property
    def ids(self) -> list:
        return [s.id for s in self.scenarios]

    def validate(self):
        if not self.scenarios:
            raise InstanceError("scenario set is empty")
        ids = self.ids
        if len(set(ids)) != len(ids):
            raise InstanceError("scenario ids must be unique")
        for s in self.scenarios:
            if not s.probability > 0:
                raise InstanceError(f"scenario {s.id}: probability must be positive")
            if not s.factor > 0:
                raise InstanceError(f"scenario {s.id}: scaling factor must be positive")
        if abs(math.fsum(s.probability for s in self.scenarios) - 1.0) > PROBABILITY_TOL:
            raise InstanceError("probabilities do not sum to 1")


@dataclass(frozen=True)
class EconomicData:
    interest_rate: float = 0.10
    lifespan: int = 15
    penalty_multiplier: float = 10.0
    loss_multiplier: float = 10.0
    include_capacitor_operating_cost: bool = False

    @property
    def crf(self) -> float:
        return capital_recovery_factor(self.interest_rate, self.lifespan)

    def validate(self):
        if self.interest_rate < 0:
            raise InstanceError("interest rate must be >= 0")
        if self.lifespan < 1:
            raise InstanceError("lifespan must be >= 1 year")
        if self.penalty_multiplier < 0 or self.loss_multiplier < 0:
            raise InstanceError("cost multipliers must be >= 0")


@dataclass(frozen=True)
class Network:
    nodes: tuple
    substations: tuple
    branches: tuple
    capacitors: tuple = ()
    base_mva: float = 1.0
    base_kv: float = 12.66
    name: str = "network"

    def __post_init__(self):
        for f in ("nodes", "substations", "branches", "capacitors"):
            object.__setattr__(self, f, tuple(getattr(self, f)))

    @property
    def node_ids(self) -> list:
        return [n.id for n in self.nodes]

    @property
    def substation_nodes(self) -> list:
        return [s.node for s in self.substations]

    def node(self, i) -> Node:
        return self._node_map[i]

    @property
    def _node_map(self):
        return {n.id: n for n in self.nodes}

    def adjacency(self) -> dict:
        adj = {i: set() for i in self.node_ids}
        for br in self.branches:
            adj[br.start].add(br.end)
            adj[br.end].add(br.start)
        return adj

    def validate(self):
        ids = self.node_ids
        if len(set(ids)) != len(ids):
            raise InstanceError("node ids must be unique")
        known = set(ids)
        if not self.substations:
            raise InstanceError("at least one substation is required")
        if not self.branches:
            raise InstanceError("no branches")
        for n in self.nodes:
            if not n.v_min < n.v_max:
                raise InstanceError(f"node {n.id}: v_min must be below v_max")
            if n.v_min <= 0:
                raise InstanceError(f"node {n.id}: v_min must be positive")
            if not 0 < n.power_factor <= 1:
                raise InstanceError(f"node {n.id}: power factor must lie in (0, 1]")
            if n.p_demand < 0 or n.q_demand < 0:
                raise InstanceError(f"node {n.id}: demands must be >= 0")
        subs = self.substation_nodes
        if len(set(subs)) != len(subs):
            raise InstanceError("duplicate substation node")
        for s in self.substations:
            if s.node not in known:
                raise InstanceError(f"substation at unknown node {s.node}")
            if min(s.p_max, s.q_max, s.fixed_cost, s.variable_cost) < 0:
                raise InstanceError(f"substation {s.node}: capacities and costs must be >= 0")
            if not 0 < s.power_factor <= 1:
                raise InstanceError(f"substation {s.node}: power factor must lie in (0, 1]")
        caps = [c.node for c in self.capacitors]
        if len(set(caps)) != len(caps):
            raise InstanceError("duplicate capacitor site")
        for c in self.capacitors:
            if c.node not in known:
                raise InstanceError(f"capacitor at unknown node {c.node}")
            if c.node in subs:
                raise InstanceError(f"capacitor site {c.node} is a substation node")
            if min(c.q_max_kvar, c.fixed_cost, c.variable_cost, c.operating_cost) < 0:
                raise InstanceError(f"capacitor {c.node}: capacities and costs must be >= 0")
        seen = set()
        for br in self.branches:
            if br.start not in known or br.end not in known:
                raise InstanceError(f"branch {br.label}: endpoint not in node set")
            if br.start == br.end:
                raise InstanceError(f"branch {br.label}: self loop")
            key = frozenset((br.start, br.end))
            if key in seen:
                raise InstanceError(f"branch {br.label}: duplicate branch")
            seen.add(key)
            if br.kind not in BRANCH_KINDS:
                raise InstanceError(f"branch {br.label}: unknown kind {br.kind!r}")
            if br.g < 0:
                raise InstanceError(f"branch {br.label}: conductance must be >= 0")
            if br.has_existing != (br.i_max_existing > 0):
                raise InstanceError(f"branch {br.label}: existing rating must be set exactly for existing conductors")
            if br.has_candidate != (br.i_max_candidate > 0):
                raise InstanceError(f"branch {br.label}: candidate rating must be set exactly for candidate conductors")
            if min(br.length, br.fixed_cost, br.variable_cost, br.maintenance_cost) < 0:
                raise InstanceError(f"branch {br.label}: lengths and costs must be >= 0")


@dataclass(frozen=True)
class Instance:
    network: Network
    scenarios: ScenarioSet
    economics: EconomicData
    time_blocks: tuple
    source: dict = field(default_factory=dict, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "time_blocks", tuple(self.time_blocks))

    def validate(self):
        self.network.validate()
        self.scenarios.validate()
        self.economics.validate()
        if not self.time_blocks:
            raise InstanceError("at least one time block is required")
        for t in self.time_blocks:
            if not t.duration > 0:
                raise InstanceError("time block durations must be positive")
            if t.load_factor < 0 or t.price < 0:
                raise InstanceError("load factors and prices must be >= 0")
        if sum(t.duration for t in self.time_blocks) > 8760 + 1e-9:
            raise InstanceError("time block durations exceed 8760 hours")
        return self

    def with_scenarios(self, scenarios: ScenarioSet) -> "Instance":
        return replace(self, scenarios=scenarios)

    # derived per-(t, s) data
    def loss_cost(self, t: int, s: int) -> float:
        """$/MWh cost attached to substation injections."""
        return self.economics.loss_multiplier * self.scenarios[s].factor * self.time_blocks[t].price

    def penalty_cost(self, t: int, s: int) -> float:
        return self.economics.penalty_multiplier * self.loss_cost(t, s)

    def demand(self, t: int, s: int):
        """Per-unit (P, Q) demand arrays in node order."""
        k = self.time_blocks[t].load_factor * self.scenarios[s].factor
        p = np.array([n.p_demand for n in self.network.nodes]) * k
        q = np.array([n.q_demand for n in self.network.nodes]) * k
        return p, q

    @property
    def total_hours(self) -> float:
        return sum(t.duration for t in self.time_blocks)

    def substation_big_m(self) -> float:
        """Upper bound on substation additions (MVA in pu)."""
        peak = max(t.load_factor for t in self.time_blocks)
        factor = max(self.scenarios.factors)
        apparent = sum(math.hypot(n.p_demand, n.q_demand) for n in self.network.nodes)
        return max(1.5 * apparent * peak * factor, 1e-3)


def capital_recovery_factor(rate: float, years: int) -> float:
    """Annuity factor r(1+r)^n / ((1+r)^n - 1); 1/n when the rate is zero."""
    if years < 1:
        raise ValueError("years must be >= 1")
    if rate < 0:
        raise ValueError("rate must be >= 0")
    if rate == 0:
        return 1.0 / years
    g = (1.0 + rate) ** years
    return rate * g / (g - 1.0)


def generate_scenarios(count: int, lo: float, hi: float, seed: int) -> ScenarioSet:
    """Equiprobable scenarios with i.i.d. uniform scaling factors on [lo, hi]."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if not 0 < lo <= hi:
        raise ValueError("need 0 < lo <= hi")
    rng = np.random.default_rng(seed)
    factors = rng.uniform(lo, hi, size=count) if hi > lo else np.full(count, float(lo))
    prob = 1.0 / count
    return ScenarioSet(tuple(Scenario(i + 1, prob, float(f)) for i, f in enumerate(factors)))


def equiprobable(factors) -> ScenarioSet:
    factors = list(factors)
    return ScenarioSet(tuple(Scenario(i + 1, 1.0 / len(factors), float(f)) for i, f in enumerate(factors)))


# -- topology diagnostics ---------------------------------------------------

@dataclass
class TopologyDiagnostics:
    connected: bool
    replacement_pairs: list
    new_routes: list
    unreachable: list

    @property
    def issues(self) -> list:
        out = []
        if not self.connected:
            out.append("union graph is disconnected")
        out += [f"node {i} unreachable from every substation" for i in self.unreachable]
        return out


def validate_topology(network: Network) -> TopologyDiagnostics:
    """Connectivity of existing+candidate branches and reachability from substations."""
    adj = network.adjacency()
    seen = set()
    queue = deque(network.substation_nodes)
    seen.update(queue)
    while queue:
        i = queue.popleft()
        for j in adj[i]:
            if j not in seen:
                seen.add(j)
                queue.append(j)
    unreachable = sorted(i for i in network.node_ids if i not in seen)
    # connectivity of the union graph regardless of substations
    start = network.node_ids[0]
    comp = {start}
    queue = deque([start])
    while queue:
        i = queue.popleft()
        for j in adj[i] - comp:
            comp.add(j)
            queue.append(j)
    return TopologyDiagnostics(
        connected=len(comp) == len(network.nodes),
        replacement_pairs=[b.label for b in network.branches if b.kind == REPLACEMENT],
        new_routes=[b.label for b in network.branches if b.kind == CANDIDATE],
        unreachable=unreachable,
    )


# -- file format --------------------------------------------------------------

def _req(d, key, where):
    try:
        return d[key]
    except (KeyError, TypeError):
        raise InstanceError(f"{where}: missing field {key!r}") from None


def _num(d, key, where, default=None):
    if key not in d:
        if default is None:
            raise InstanceError(f"{where}: missing field {key!r}")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise InstanceError(f"{where}: field {key!r} must be a number")
    return float(v)


def parse_instance(data: dict) -> Instance:
    """Build and validate an instance from the decoded JSON document."""
    if not isinstance(data, dict):
        raise InstanceError("instance document must be a JSON object")
    for key in ("base", "nodes", "substations", "branches", "time_blocks", "scenarios", "economics"):
        if key not in data:
            raise InstanceError(f"missing top-level key {key!r}")
    base = data["base"]
    mva = _num(base, "mva", "base")
    if mva <= 0:
        raise InstanceError("base: mva must be positive")
    kv = _num(base, "kv", "base", 12.66)

    nodes = []
    for k, d in enumerate(data["nodes"]):
        where = f"nodes[{k}]"
        p = _num(d, "p_demand", where, 0.0)
        pf = d.get("power_factor")
        if pf is not None:
            pf = _num(d, "power_factor", where)
            if not 0 < pf <= 1:
                raise InstanceError(f"{where}: power factor must lie in (0, 1]")
        q = _num(d, "q_demand", where, -1.0) if "q_demand" in d else None
        if q is None:
            q = p * math.tan(math.acos(pf if pf is not None else 1.0))
        if pf is None:
            pf = math.cos(math.atan2(q, p)) if p > 0 else 1.0
        nodes.append(Node(
            id=int(_req(d, "id", where)), p_demand=p / mva, q_demand=q / mva, power_factor=pf,
            v_min=_num(d, "v_min", where, 0.95), v_max=_num(d, "v_max", where, 1.05),
        ))

    subs = []
    for k, d in enumerate(data["substations"]):
        where = f"substations[{k}]"
        subs.append(Substation(
            node=int(_req(d, "node", where)),
            p_max=_num(d, "p_max", where) / mva, q_max=_num(d, "q_max", where) / mva,
            power_factor=_num(d, "power_factor", where, 0.9),
            fixed_cost=_num(d, "fixed_cost", where, 0.0), variable_cost=_num(d, "variable_cost", where, 0.0),
        ))

    caps = []
    for k, d in enumerate(data.get("capacitors", [])):
        where = f"capacitors[{k}]"
        caps.append(CapacitorSite(
            node=int(_req(d, "node", where)), q_max_kvar=_num(d, "q_max", where),
            fixed_cost=_num(d, "fixed_cost", where, 0.0), variable_cost=_num(d, "variable_cost", where, 0.0),
            operating_cost=_num(d, "operating_cost", where, 0.0),
        ))

    branches = []
    for k, d in enumerate(data["branches"]):
        where = f"branches[{k}]"
        kind = _req(d, "kind", where)
        if kind not in BRANCH_KINDS:
            raise InstanceError(f"{where}: kind must be one of {BRANCH_KINDS}")
        branches.append(Branch(
            start=int(_req(d, "from", where)), end=int(_req(d, "to", where)), kind=kind,
            g=_num(d, "g", where), b=_num(d, "b", where), b_sh=_num(d, "b_sh", where, 0.0),
            length=_num(d, "length", where, 1.0),
            i_max_existing=_num(d, "i_max_existing", where, 0.0),
            i_max_candidate=_num(d, "i_max_candidate", where, 0.0),
            fixed_cost=_num(d, "fixed_cost", where, 0.0), variable_cost=_num(d, "variable_cost", where, 0.0),
            maintenance_cost=_num(d, "maintenance_cost", where, 0.0),
        ))

    blocks = []
    for k, d in enumerate(data["time_blocks"]):
        where = f"time_blocks[{k}]"
        blocks.append(TimeBlock(
            duration=_num(d, "duration", where), load_factor=_num(d, "load_factor", where),
            price=_num(d, "price", where),
        ))

    sc = data["scenarios"]
    if isinstance(sc, dict) and "generate" in sc:
        g = sc["generate"]
        scenarios = generate_scenarios(
            int(_num(g, "count", "scenarios.generate")), _num(g, "low", "scenarios.generate"),
            _num(g, "high", "scenarios.generate"), int(_num(g, "seed", "scenarios.generate", 0)),
        )
    elif isinstance(sc, list):
        scenarios = ScenarioSet(tuple(
            Scenario(int(_req(d, "id", f"scenarios[{k}]")), _num(d, "probability", f"scenarios[{k}]"),
                     _num(d, "factor", f"scenarios[{k}]"))
            for k, d in enumerate(sc)
        ))
    else:
        raise InstanceError("scenarios must be a list or a {'generate': ...} object")

    e = data["economics"]
    economics = EconomicData(
        interest_rate=_num(e, "interest_rate", "economics", 0.10),
        lifespan=int(_num(e, "lifespan", "economics", 15)),
        penalty_multiplier=_num(e, "penalty_multiplier", "economics", 10.0),
        loss_multiplier=_num(e, "loss_multiplier", "economics", 10.0),
        include_capacitor_operating_cost=bool(e.get("include_capacitor_operating_cost", False)),
    )
    network = Network(tuple(nodes), tuple(subs), tuple(branches), tuple(caps), mva, kv,
                      str(data.get("name", "network")))
    inst = Instance(network, scenarios, economics, tuple(blocks), source=data)
    return inst.validate()


def load_instance(path) -> Instance:
    """Read, parse and validate an instance JSON file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InstanceError(f"cannot read {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InstanceError(f"{path}: parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    return parse_instance(data)


def instance_to_dict(inst: Instance) -> dict:
    """Inverse of :func:`parse_instance` (scenarios are written out explicitly)."""
    net = inst.network
    mva = net.base_mva
    return {
        "name": net.name,
        "base": {"mva": mva, "kv": net.base_kv},
        "nodes": [
            {"id": n.id, "p_demand": n.p_demand * mva, "q_demand": n.q_demand * mva,
             "power_factor": n.power_factor, "v_min": n.v_min, "v_max": n.v_max}
            for n in net.nodes
        ],
        "substations": [
            {"node": s.node, "p_max": s.p_max * mva, "q_max": s.q_max * mva, "power_factor": s.power_factor,
             "fixed_cost": s.fixed_cost, "variable_cost": s.variable_cost}
            for s in net.substations
        ],
        "branches": [
            {"from": b.start, "to": b.end, "kind": b.kind, "g": b.g, "b": b.b, "b_sh": b.b_sh,
             "length": b.length, "i_max_existing": b.i_max_existing, "i_max_candidate": b.i_max_candidate,
             "fixed_cost": b.fixed_cost, "variable_cost": b.variable_cost, "maintenance_cost": b.maintenance_cost}
            for b in net.branches
        ],
        "capacitors": [
            {"node": c.node, "q_max": c.q_max_kvar, "fixed_cost": c.fixed_cost,
             "variable_cost": c.variable_cost, "operating_cost": c.operating_cost}
            for c in net.capacitors
        ],
        "time_blocks": [asdict(t) for t in inst.time_blocks],
        "scenarios": [asdict(s) for s in inst.scenarios],
        "economics": asdict(inst.economics),
    }


def dump_instance(inst: Instance, path) -> None:
    Path(path).write_text(json.dumps(instance_to_dict(inst), indent=2) + "\n")


def bundled_path(name: str) -> Path:
    """Path of a dataset shipped in ``dsplan/data`` (e.g. ``"five_node.json"``)."""
    return Path(str(resources.files("dsplan.data").joinpath(name)))


def load_bundled(name: str = "five_node.json") -> Instance:
    return load_instance(bundled_path(name))
