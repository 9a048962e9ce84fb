"""Honeynet engagement model: states, actions, transition kernel, sojourn rates, rewards.

A scenario is a decision process over a decoy network: N honeypot nodes, an
optional normal (production) zone, and one virtual absorbing state entered
when the intruder is ejected or terminates.  Decisions are made at jump
epochs; the sojourn before each jump is exponential with a rate that may
depend on (state, action, successor).  The model is immutable once built and
safe to share across worker threads or processes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

#: Transition probabilities must sum to one within this slack.
ROW_SUM_TOL = 1e-9

#: Effective per-stage discounts must stay below 1 - REGULATION_MARGIN.
REGULATION_MARGIN = 1e-9


class ScenarioError(ValueError):
    """Base class for scenario validation failures."""


class SchemaError(ScenarioError):
    """Document structure, field type, or bound violation."""


class StochasticityError(ScenarioError):
    """A transition row is not a probability distribution."""


class TopologyError(ScenarioError):
    """A transition references a state pair outside the declared edge set."""


class RegulationError(ScenarioError):
    """Effective stage discount reaches 1: jump explosion not excluded."""


class Action(IntEnum):
    """Engagement actions; integer order is the deterministic tie-break order."""

    EJECT = 0
    PASSIVE = 1
    LOW_INTERACT = 2
    HIGH_INTERACT = 3
    ATTRACT = 4

    @property
    def wire(self) -> str:
        return self.name.lower()

    @classmethod
    def from_wire(cls, name: str) -> "Action":
        try:
            return cls[name.upper()]
        except KeyError:
            raise SchemaError(f"unknown action name {name!r}") from None


class NodeKind(str, Enum):
    HONEYPOT = "honeypot"
    NORMAL = "normal"
    ABSORBING = "absorbing"


#: Admissible actions by node kind.  The absorbing state has a single no-op,
#: modeled as EJECT with zero reward and a probability-1 self loop.
ACTION_SETS: dict[NodeKind, tuple[Action, ...]] = {
    NodeKind.HONEYPOT: (Action.EJECT, Action.PASSIVE, Action.LOW_INTERACT, Action.HIGH_INTERACT),
    NodeKind.NORMAL: (Action.EJECT, Action.ATTRACT),
    NodeKind.ABSORBING: (Action.EJECT,),
}

StateId = int


@dataclass(frozen=True)
class Topology:
    """Directed link structure over the non-absorbing nodes."""

    node_count: int
    edges: frozenset[tuple[int, int]]

    def __post_init__(self) -> None:
        for j, l in self.edges:
            if not (0 <= j < self.node_count and 0 <= l < self.node_count):
                raise TopologyError(f"edge ({j},{l}) references a node outside 0..{self.node_count - 1}")

    def has_edge(self, j: int, l: int) -> bool:
        return (j, l) in self.edges


@dataclass(frozen=True, eq=False)
class TransitionRow:
    """Dense view of one (state, action) row, ready for sampling and backups."""

    succ: np.ndarray   # successor state ids, ascending
    prob: np.ndarray   # transition probabilities, aligned with succ
    rate: np.ndarray   # exponential sojourn rates per successor
    r1: np.ndarray     # jump rewards per successor
    cum: np.ndarray = field(init=False)  # cumulative probabilities for sampling

    def __post_init__(self) -> None:
        object.__setattr__(self, "cum", np.cumsum(self.prob))


@dataclass(frozen=True, eq=False)
class SmdpModel:
    """Validated engagement process instance.

    Sparse kernel maps hold only positive-probability entries; everything is
    read-only after construction.
    """

    topology: Topology
    gamma: float
    noise_sigma: float
    reward_bound: float
    kinds: tuple[NodeKind, ...]
    names: tuple[str, ...]
    transition: dict[tuple[StateId, Action], dict[StateId, float]]
    rate: dict[tuple[StateId, Action, StateId], float]
    reward_jump: dict[tuple[StateId, Action, StateId], float]
    reward_rate: dict[tuple[StateId, Action], float]
    rows: dict[tuple[StateId, Action], TransitionRow] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        rows = {}
        for (s, a), dist in self.transition.items():
            succ = np.array(sorted(dist), dtype=np.intp)
            prob = np.array([dist[t] for t in succ], dtype=float)
            rate = np.array([self.rate[(s, a, int(t))] for t in succ], dtype=float)
            r1 = np.array([self.reward_jump.get((s, a, int(t)), 0.0) for t in succ], dtype=float)
            rows[(s, a)] = TransitionRow(succ, prob, rate, r1)
        object.__setattr__(self, "rows", rows)

    # -- structural accessors -------------------------------------------------

    @property
    def n_states(self) -> int:
        return len(self.kinds)

    @property
    def absorbing_state(self) -> StateId:
        return self.n_states - 1

    @property
    def normal_state(self) -> StateId | None:
        for s, kind in enumerate(self.kinds):
            if kind is NodeKind.NORMAL:
                return s
        return None

    @property
    def honeypots(self) -> tuple[StateId, ...]:
        return tuple(s for s, k in enumerate(self.kinds) if k is NodeKind.HONEYPOT)

    def action_set(self, s: StateId) -> tuple[Action, ...]:
        return ACTION_SETS[self.kinds[s]]

    def row(self, s: StateId, a: Action) -> TransitionRow:
        return self.rows[(s, a)]

    def bridge_states(self) -> tuple[StateId, ...]:
        """Honeypots adjacent to the normal zone in either direction."""
        normal = self.normal_state
        if normal is None:
            return ()
        out = []
        for s in self.honeypots:
            if self.topology.has_edge(s, normal) or self.topology.has_edge(normal, s):
                out.append(s)
        return tuple(out)


@dataclass(frozen=True)
class Policy:
    """Deterministic stationary state -> action map."""

    choice: dict[StateId, Action]

    def action(self, s: StateId) -> Action:
        return self.choice[s]

    def validate(self, model: SmdpModel) -> None:
        for s in range(model.n_states):
            if s not in self.choice:
                raise ValueError(f"policy missing state {s}")
            if self.choice[s] not in model.action_set(s):
                raise ValueError(f"action {self.choice[s].wire} not admissible in state {s}")


@dataclass(frozen=True, eq=False)
class ValueFunction:
    values: np.ndarray

    def __getitem__(self, s: StateId) -> float:
        return float(self.values[s])


@dataclass(frozen=True)
class RegulationReport:
    """Effective stage discounts beta(s,a) = sum_s' tr(s'|s,a) * lambda/(lambda+gamma)."""

    beta: dict[tuple[StateId, Action], float]
    beta_max: float
    passed: bool

    def offending_pairs(self) -> list[tuple[StateId, Action]]:
        return [k for k, b in self.beta.items() if b >= 1.0 - REGULATION_MARGIN]


def check_regulation(model: SmdpModel) -> RegulationReport:
    """Report per-pair effective discounts and whether jump explosion is excluded.

    With strictly positive gamma and finite rates every summand
    lambda/(lambda+gamma) is below 1, so the check can only fail on degenerate
    inputs; it is still enforced because the solver's contraction argument
    rests on it.
    """
    beta: dict[tuple[StateId, Action], float] = {}
    for (s, a), row in model.rows.items():
        z = row.rate / (row.rate + model.gamma)
        beta[(s, a)] = float(np.dot(row.prob, z))
    beta_max = max(beta.values())
    return RegulationReport(beta=beta, beta_max=beta_max, passed=beta_max <= 1.0 - REGULATION_MARGIN)


# -- scenario document handling -----------------------------------------------

_TOP_KEYS = {"gamma", "noise_sigma", "reward_bound", "nodes", "edges", "transitions", "rates",
             "rewards", "learn"}


def _require(cond: bool, err: type[ScenarioError], msg: str) -> None:
    if not cond:
        raise err(msg)


def _as_number(doc: Mapping[str, Any], key: str) -> float:
    _require(key in doc, SchemaError, f"missing top-level key {key!r}")
    v = doc[key]
    _require(isinstance(v, (int, float)) and not isinstance(v, bool), SchemaError,
             f"{key} must be a number, got {type(v).__name__}")
    v = float(v)
    _require(math.isfinite(v), SchemaError, f"{key} must be finite")
    return v


def _parse_nodes(doc: Mapping[str, Any]) -> tuple[tuple[NodeKind, ...], tuple[str, ...]]:
    nodes = doc.get("nodes")
    _require(isinstance(nodes, list) and nodes, SchemaError, "nodes must be a non-empty array")
    kinds: dict[int, NodeKind] = {}
    names: dict[int, str] = {}
    for i, entry in enumerate(nodes):
        _require(isinstance(entry, dict), SchemaError, f"nodes[{i}] must be an object")
        for k in ("id", "name", "kind"):
            _require(k in entry, SchemaError, f"nodes[{i}] missing key {k!r}")
        nid = entry["id"]
        _require(isinstance(nid, int) and not isinstance(nid, bool), SchemaError, f"nodes[{i}].id must be an integer")
        _require(nid not in kinds, SchemaError, f"duplicate node id {nid}")
        try:
            kinds[nid] = NodeKind(entry["kind"])
        except ValueError:
            raise SchemaError(f"nodes[{i}].kind must be honeypot|normal|absorbing, got {entry['kind']!r}") from None
        names[nid] = str(entry["name"])
    n = len(kinds)
    _require(set(kinds) == set(range(n)), SchemaError, "node ids must be contiguous starting at 0")
    kind_seq = tuple(kinds[i] for i in range(n))
    n_honey = sum(k is NodeKind.HONEYPOT for k in kind_seq)
    n_normal = sum(k is NodeKind.NORMAL for k in kind_seq)
    n_abs = sum(k is NodeKind.ABSORBING for k in kind_seq)
    _require(n_honey >= 1, SchemaError, "at least one honeypot node is required")
    _require(n_abs == 1, SchemaError, f"exactly one absorbing node is required, found {n_abs}")
    _require(n_normal <= 1, SchemaError, f"at most one normal-zone node is allowed, found {n_normal}")
    for i in range(n_honey):
        _require(kind_seq[i] is NodeKind.HONEYPOT, SchemaError,
                 f"honeypot nodes must occupy ids 0..{n_honey - 1}; id {i} is {kind_seq[i].value}")
    if n_normal:
        _require(kind_seq[n_honey] is NodeKind.NORMAL, SchemaError,
                 f"the normal-zone node must have id {n_honey}")
    _require(kind_seq[-1] is NodeKind.ABSORBING, SchemaError,
             f"the absorbing node must have the last id {n - 1}")
    return kind_seq, tuple(names[i] for i in range(n))


def _parse_edges(doc: Mapping[str, Any], n_nonabs: int) -> frozenset[tuple[int, int]]:
    edges = doc.get("edges", [])
    _require(isinstance(edges, list), SchemaError, "edges must be an array of [int,int] pairs")
    out = set()
    for i, e in enumerate(edges):
        _require(isinstance(e, (list, tuple)) and len(e) == 2, SchemaError, f"edges[{i}] must be a pair")
        j, l = e
        _require(isinstance(j, int) and isinstance(l, int), SchemaError, f"edges[{i}] must contain integers")
        _require(0 <= j < n_nonabs and 0 <= l < n_nonabs, TopologyError,
                 f"edges[{i}]=({j},{l}) references a node outside the non-absorbing range 0..{n_nonabs - 1}")
        out.add((j, l))
    return frozenset(out)


def _parse_dist(raw: Mapping[str, Any], where: str) -> dict[int, float]:
    _require(isinstance(raw, dict) and raw, SchemaError, f"{where}.dist must be a non-empty object")
    dist: dict[int, float] = {}
    for key, p in raw.items():
        try:
            t = int(key)
        except (TypeError, ValueError):
            raise SchemaError(f"{where}.dist key {key!r} is not a state id") from None
        _require(isinstance(p, (int, float)) and not isinstance(p, bool), SchemaError,
                 f"{where}.dist[{key}] must be a number")
        p = float(p)
        _require(math.isfinite(p), SchemaError, f"{where}.dist[{key}] must be finite")
        if p != 0.0:
            _require(p > 0.0, StochasticityError, f"{where}: negative probability {p} for successor {t}")
            _require(t not in dist, SchemaError, f"{where}.dist has duplicate successor {t}")
            dist[t] = p
    return dist


def load_scenario(document: str | bytes | Mapping[str, Any]) -> SmdpModel:
    """Parse and validate a scenario document into an immutable model.

    The document is a JSON object with keys: gamma, noise_sigma, reward_bound,
    nodes, edges, transitions, rates, rewards.  Node ids must be contiguous:
    honeypots first, then an optional normal zone, then the absorbing state.
    Every admissible (state, action) pair needs exactly one transition row and
    a positive sojourn rate for every positive-probability successor.  The
    absorbing state's self loop may be omitted; it is synthesized with rate 1.

    Raises SchemaError / StochasticityError / TopologyError / RegulationError
    with a message naming the offending path.
    """
    if isinstance(document, (str, bytes)):
        try:
            doc = json.loads(document)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"document is not valid JSON: {exc}") from None
    else:
        doc = dict(document)
    _require(isinstance(doc, dict), SchemaError, "top-level document must be a JSON object")
    unknown = set(doc) - _TOP_KEYS
    _require(not unknown, SchemaError, f"unknown top-level keys: {sorted(unknown)}")

    if "learn" in doc:  # optional learning-config block, consumed by the CLI
        _require(isinstance(doc["learn"], dict), SchemaError, "learn must be an object")

    gamma = _as_number(doc, "gamma")
    _require(gamma > 0.0, SchemaError, "gamma must be strictly positive (undiscounted processes are not supported)")
    noise_sigma = _as_number(doc, "noise_sigma")
    _require(noise_sigma >= 0.0, SchemaError, "noise_sigma must be nonnegative")
    reward_bound = _as_number(doc, "reward_bound")
    _require(reward_bound > 0.0, SchemaError, "reward_bound must be positive")

    kinds, names = _parse_nodes(doc)
    n = len(kinds)
    absorbing = n - 1
    topology = Topology(node_count=n - 1, edges=_parse_edges(doc, n - 1))

    # transitions
    raw_rows = doc.get("transitions")
    _require(isinstance(raw_rows, list), SchemaError, "transitions must be an array")
    transition: dict[tuple[int, Action], dict[int, float]] = {}
    for i, entry in enumerate(raw_rows):
        where = f"transitions[{i}]"
        _require(isinstance(entry, dict), SchemaError, f"{where} must be an object")
        for k in ("state", "action", "dist"):
            _require(k in entry, SchemaError, f"{where} missing key {k!r}")
        s = entry["state"]
        _require(isinstance(s, int) and 0 <= s < n, SchemaError, f"{where}.state={s!r} is not a valid state id")
        a = Action.from_wire(str(entry["action"]))
        _require(a in ACTION_SETS[kinds[s]], SchemaError,
                 f"{where}: action {a.wire} is not admissible in state {s} ({kinds[s].value})")
        _require((s, a) not in transition, SchemaError, f"{where}: duplicate row for state {s} action {a.wire}")
        dist = _parse_dist(entry["dist"], where)
        for t in dist:
            _require(0 <= t < n, SchemaError, f"{where}.dist successor {t} is not a valid state id")
        total = sum(dist.values())
        _require(abs(total - 1.0) <= ROW_SUM_TOL, StochasticityError,
                 f"{where}: probabilities for state {s} action {a.wire} sum to {total!r}, expected 1")
        if s == absorbing:
            _require(dist == {absorbing: 1.0} or (len(dist) == 1 and absorbing in dist), TopologyError,
                     f"{where}: the absorbing state must self-loop with probability 1")
        else:
            for t in dist:
                if t != absorbing and not topology.has_edge(s, t):
                    raise TopologyError(
                        f"{where}: transition {s}->{t} under {a.wire} has no edge ({s},{t}) in the topology")
        transition[(s, a)] = dist

    for s in range(n):
        for a in ACTION_SETS[kinds[s]]:
            if (s, a) == (absorbing, Action.EJECT) and (s, a) not in transition:
                transition[(s, a)] = {absorbing: 1.0}  # synthesized closed self loop
                continue
            _require((s, a) in transition, SchemaError,
                     f"missing transition row for state {s} action {a.wire}")

    # rates
    raw_rates = doc.get("rates")
    _require(isinstance(raw_rates, list), SchemaError, "rates must be an array")
    rate: dict[tuple[int, Action, int], float] = {}
    for i, entry in enumerate(raw_rates):
        where = f"rates[{i}]"
        _require(isinstance(entry, dict), SchemaError, f"{where} must be an object")
        for k in ("state", "action", "to", "lambda"):
            _require(k in entry, SchemaError, f"{where} missing key {k!r}")
        s, t = entry["state"], entry["to"]
        a = Action.from_wire(str(entry["action"]))
        _require(isinstance(s, int) and 0 <= s < n, SchemaError, f"{where}.state={s!r} is not a valid state id")
        _require(isinstance(t, int) and 0 <= t < n, SchemaError, f"{where}.to={t!r} is not a valid state id")
        lam = entry["lambda"]
        _require(isinstance(lam, (int, float)) and not isinstance(lam, bool) and math.isfinite(float(lam)),
                 SchemaError, f"{where}.lambda must be a finite number")
        lam = float(lam)
        _require(lam > 0.0, SchemaError, f"{where}: rate for ({s},{a.wire},{t}) must be strictly positive")
        key = (s, a, t)
        _require(key not in rate, SchemaError, f"{where}: duplicate rate for ({s},{a.wire},{t})")
        _require((s, a) in transition and t in transition[(s, a)], SchemaError,
                 f"{where}: rate given for zero-probability transition ({s},{a.wire},{t})")
        rate[key] = lam
    if (absorbing, Action.EJECT, absorbing) not in rate:
        rate[(absorbing, Action.EJECT, absorbing)] = 1.0
    for (s, a), dist in transition.items():
        for t in dist:
            _require((s, a, t) in rate, SchemaError,
                     f"missing sojourn rate for positive-probability transition ({s},{a.wire},{t})")

    # rewards
    raw_rewards = doc.get("rewards", [])
    _require(isinstance(raw_rewards, list), SchemaError, "rewards must be an array")
    reward_jump: dict[tuple[int, Action, int], float] = {}
    reward_rate: dict[tuple[int, Action], float] = {}
    for i, entry in enumerate(raw_rewards):
        where = f"rewards[{i}]"
        _require(isinstance(entry, dict), SchemaError, f"{where} must be an object")
        for k in ("state", "action"):
            _require(k in entry, SchemaError, f"{where} missing key {k!r}")
        s = entry["state"]
        a = Action.from_wire(str(entry["action"]))
        _require(isinstance(s, int) and 0 <= s < n, SchemaError, f"{where}.state={s!r} is not a valid state id")
        _require((s, a) in transition, SchemaError, f"{where}: no transition row for state {s} action {a.wire}")
        has_r1, has_r2 = "r1" in entry, "r2" in entry
        _require(has_r1 or has_r2, SchemaError, f"{where} must carry r1 or r2")
        if has_r1:
            _require("to" in entry, SchemaError, f"{where}: r1 entries must name a successor via 'to'")
            t = entry["to"]
            _require(isinstance(t, int) and t in transition[(s, a)], SchemaError,
                     f"{where}: r1 successor {t!r} has zero probability under ({s},{a.wire})")
            v = float(entry["r1"])
            _require(math.isfinite(v), SchemaError, f"{where}.r1 must be finite")
            _require(abs(v) <= reward_bound, SchemaError,
                     f"{where}: |r1|={abs(v)} exceeds reward_bound={reward_bound}")
            _require((s, a, t) not in reward_jump, SchemaError, f"{where}: duplicate r1 for ({s},{a.wire},{t})")
            reward_jump[(s, a, t)] = v
        if has_r2:
            _require("to" not in entry or has_r1, SchemaError,
                     f"{where}: r2 is per (state, action) and must not name a successor")
            v = float(entry["r2"])
            _require(math.isfinite(v), SchemaError, f"{where}.r2 must be finite")
            _require((s, a) not in reward_rate, SchemaError, f"{where}: duplicate r2 for ({s},{a.wire})")
            reward_rate[(s, a)] = v

    for (s, a, t), v in list(reward_jump.items()):
        if s == absorbing and v != 0.0:
            raise SchemaError(f"absorbing state rewards must be zero, got r1={v}")
    if reward_rate.get((absorbing, Action.EJECT), 0.0) != 0.0:
        raise SchemaError("absorbing state rewards must be zero, got nonzero r2")

    # equivalent-reward bound: |r1 + r2/gamma * (1 - z)| <= reward_bound
    for (s, a), dist in transition.items():
        r2 = reward_rate.get((s, a), 0.0)
        for t in dist:
            z = rate[(s, a, t)] / (rate[(s, a, t)] + gamma)
            r_eq = reward_jump.get((s, a, t), 0.0) + (r2 / gamma) * (1.0 - z)
            _require(abs(r_eq) <= reward_bound, SchemaError,
                     f"equivalent reward {r_eq!r} for ({s},{a.wire},{t}) exceeds reward_bound={reward_bound}")

    model = SmdpModel(
        topology=topology,
        gamma=gamma,
        noise_sigma=noise_sigma,
        reward_bound=reward_bound,
        kinds=kinds,
        names=names,
        transition=transition,
        rate=rate,
        reward_jump=reward_jump,
        reward_rate=reward_rate,
    )
    report = check_regulation(model)
    if not report.passed:
        pairs = ", ".join(f"({s},{a.wire})" for s, a in report.offending_pairs())
        raise RegulationError(f"effective stage discount reaches 1 for pairs: {pairs}")
    return model


def load_scenario_path(path: str | Path) -> SmdpModel:
    return load_scenario(Path(path).read_text(encoding="utf-8"))


def serialize_scenario(model: SmdpModel) -> dict[str, Any]:
    """Emit a scenario document that round-trips through load_scenario."""
    nodes = [
        {"id": i, "name": model.names[i], "kind": model.kinds[i].value}
        for i in range(model.n_states)
    ]
    transitions = []
    rates = []
    rewards: list[dict[str, Any]] = []
    for (s, a) in sorted(model.transition, key=lambda k: (k[0], int(k[1]))):
        dist = model.transition[(s, a)]
        transitions.append({
            "state": s,
            "action": a.wire,
            "dist": {str(t): dist[t] for t in sorted(dist)},
        })
        for t in sorted(dist):
            rates.append({"state": s, "action": a.wire, "to": t, "lambda": model.rate[(s, a, t)]})
            r1 = model.reward_jump.get((s, a, t))
            if r1 is not None:
                rewards.append({"state": s, "action": a.wire, "to": t, "r1": r1})
        r2 = model.reward_rate.get((s, a))
        if r2 is not None:
            rewards.append({"state": s, "action": a.wire, "r2": r2})
    return {
        "gamma": model.gamma,
        "noise_sigma": model.noise_sigma,
        "reward_bound": model.reward_bound,
        "nodes": nodes,
        "edges": sorted(model.topology.edges),
        "transitions": transitions,
        "rates": rates,
        "rewards": rewards,
    }


def models_equal(a: SmdpModel, b: SmdpModel, tol: float = 1e-12) -> bool:
    """Field-wise equality: exact on structure, within tol on real values."""
    if (a.kinds, a.names, a.topology.node_count, a.topology.edges) != \
       (b.kinds, b.names, b.topology.node_count, b.topology.edges):
        return False
    for x, y in ((a.gamma, b.gamma), (a.noise_sigma, b.noise_sigma), (a.reward_bound, b.reward_bound)):
        if abs(x - y) > tol:
            return False
    if set(a.transition) != set(b.transition) or set(a.rate) != set(b.rate):
        return False
    for key, dist in a.transition.items():
        other = b.transition[key]
        if set(dist) != set(other) or any(abs(dist[t] - other[t]) > tol for t in dist):
            return False
    if any(abs(a.rate[k] - b.rate[k]) > tol for k in a.rate):
        return False
    keys = set(a.reward_jump) | set(b.reward_jump)
    if any(abs(a.reward_jump.get(k, 0.0) - b.reward_jump.get(k, 0.0)) > tol for k in keys):
        return False
    keys2 = set(a.reward_rate) | set(b.reward_rate)
    return all(abs(a.reward_rate.get(k, 0.0) - b.reward_rate.get(k, 0.0)) <= tol for k in keys2)


def bundled_scenario_path(name: str) -> Path:
    """Path of a scenario shipped with the package (e.g. 'desk3', 'honeynet13')."""
    candidate = resources.files("hpengage").joinpath("scenarios", f"{name}.json")
    with resources.as_file(candidate) as p:
        if not p.exists():
            raise FileNotFoundError(f"no bundled scenario named {name!r}")
        return Path(p)
