"""Parameter sweeps for intruder persistence, intelligence, and the value trade-off.

Each sweep perturbs the scenario at the document level, re-validates it
through the loader, re-solves for the optimal policy, rebuilds the induced
chain, and reports three engagement criteria per non-absorbing start state:
the long-run probability of the normal zone, the value of the normal zone,
and the expected value under the long-run occupancy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Action, SmdpModel, StateId, load_scenario, serialize_scenario
from .risk import build_generator, limiting_occupancy
from .solver import value_iteration


@dataclass(frozen=True)
class SweepRow:
    param: float
    start: StateId
    stationary_normal: float
    v_normal: float
    expected_utility: float
    degenerate: bool  # honeynet unreachable from the start under this parameter


def _require_normal(model: SmdpModel) -> StateId:
    normal = model.normal_state
    if normal is None:
        raise ValueError("sweeps require a scenario with a normal zone")
    return normal


def _attract_targets(model: SmdpModel) -> list[StateId]:
    normal = _require_normal(model)
    dist = model.transition[(normal, Action.ATTRACT)]
    targets = [t for t in dist if t in model.honeypots]
    if not targets:
        raise ValueError("the attraction action reaches no honeypot")
    return sorted(targets)


def with_persistence(model: SmdpModel, lam: float) -> SmdpModel:
    """Rewrite the attraction sojourn rates toward bridge honeypots to `lam`."""
    if lam <= 0.0:
        raise ValueError(f"persistence rate must be positive, got {lam}")
    normal = _require_normal(model)
    targets = set(_attract_targets(model))
    doc = serialize_scenario(model)
    for entry in doc["rates"]:
        if entry["state"] == normal and entry["action"] == Action.ATTRACT.wire and entry["to"] in targets:
            entry["lambda"] = lam
    return load_scenario(doc)


def with_intelligence(model: SmdpModel, p: float) -> SmdpModel:
    """Reassign the attraction row so the failure (stay/terminate) mass is `p`.

    The failure mass splits between staying in the normal zone and direct
    termination proportionally to the base scenario (all to staying when the
    base has no failure mass); the remaining 1-p spreads over the base
    honeypot targets proportionally.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"failure probability must lie in [0, 1], got {p}")
    normal = _require_normal(model)
    absorbing = model.absorbing_state
    base = model.transition[(normal, Action.ATTRACT)]
    stay0 = base.get(normal, 0.0)
    term0 = base.get(absorbing, 0.0)
    hp_targets = _attract_targets(model)
    hp_mass0 = sum(base[t] for t in hp_targets)

    dist: dict[int, float] = {}
    fail0 = stay0 + term0
    if fail0 > 0.0:
        stay, term = p * stay0 / fail0, p * term0 / fail0
    else:
        stay, term = p, 0.0
    if stay > 0.0:
        dist[normal] = stay
    if term > 0.0:
        dist[absorbing] = term
    if p < 1.0:
        for t in hp_targets:
            dist[t] = (1.0 - p) * base[t] / hp_mass0

    doc = serialize_scenario(model)
    for entry in doc["transitions"]:
        if entry["state"] == normal and entry["action"] == Action.ATTRACT.wire:
            entry["dist"] = {str(t): dist[t] for t in sorted(dist)}
    doc["rates"] = [e for e in doc["rates"]
                    if not (e["state"] == normal and e["action"] == Action.ATTRACT.wire)]
    for t in sorted(dist):
        key = (normal, Action.ATTRACT, t)
        lam = model.rate.get(key)
        if lam is None:
            # a successor with zero base mass acquired probability: reuse the
            # row's base rate so sojourn behavior stays comparable
            lam = float(np.mean([model.rate[(normal, Action.ATTRACT, u)]
                                 for u in model.transition[(normal, Action.ATTRACT)]]))
        doc["rates"].append({"state": normal, "action": Action.ATTRACT.wire, "to": t, "lambda": lam})
    doc["rewards"] = [e for e in doc["rewards"]
                      if not (e["state"] == normal and e["action"] == Action.ATTRACT.wire and "to" in e
                              and int(e["to"]) not in dist)]
    return load_scenario(doc)


def with_tradeoff(model: SmdpModel, penetration: float, reward: float,
                  bridge_states=None) -> SmdpModel:
    """Set bridge-state penetration to `penetration` and honeypot stage rewards to `reward`.

    For every non-eject action of every bridge honeypot the normal-zone mass
    becomes `penetration` and the remaining successors keep their relative
    proportions.  Every honeypot-state equivalent stage reward becomes
    `reward` exactly (jump reward := reward, reward rate := 0).
    """
    if not 0.0 <= penetration < 1.0:
        raise ValueError(f"penetration probability must lie in [0, 1), got {penetration}")
    normal = _require_normal(model)
    bridges = tuple(sorted(bridge_states)) if bridge_states is not None else model.bridge_states()
    for s in bridges:
        if s not in model.bridge_states():
            raise ValueError(f"state {s} is not a honeypot adjacent to the normal zone")

    new_rows: dict[tuple[int, str], dict[int, float]] = {}
    for s in bridges:
        for a in model.action_set(s):
            if a is Action.EJECT:
                continue
            base = model.transition[(s, a)]
            rest = {t: q for t, q in base.items() if t != normal}
            rest_mass = sum(rest.values())
            if rest_mass <= 0.0 and penetration < 1.0:
                raise ValueError(
                    f"row ({s},{a.wire}) has no non-penetration mass to renormalize")
            dist = {t: q * (1.0 - penetration) / rest_mass for t, q in rest.items()}
            if penetration > 0.0:
                dist[normal] = penetration
            new_rows[(s, a.wire)] = dist

    doc = serialize_scenario(model)
    doc["reward_bound"] = max(model.reward_bound, abs(reward))
    for entry in doc["transitions"]:
        key = (entry["state"], entry["action"])
        if key in new_rows:
            entry["dist"] = {str(t): v for t, v in sorted(new_rows[key].items())}

    # rates for rewritten rows: keep per-successor rates; a newly positive
    # normal-zone successor reuses the row mean so the perturbation stays
    # well-posed
    kept = []
    for e in doc["rates"]:
        key = (e["state"], e["action"])
        if key in new_rows and e["to"] not in new_rows[key]:
            continue
        kept.append(e)
    present = {(e["state"], e["action"], e["to"]) for e in kept}
    for (s, a_wire), dist in new_rows.items():
        a = Action.from_wire(a_wire)
        for t in dist:
            if (s, a_wire, t) in present:
                continue
            lam = model.rate.get((s, a, t))
            if lam is None:
                lam = float(np.mean([model.rate[(s, a, u)] for u in model.transition[(s, a)]]))
            kept.append({"state": s, "action": a_wire, "to": t, "lambda": lam})
    doc["rates"] = kept

    # honeypot stage rewards: r1 := reward on every positive-probability
    # successor, rate reward := 0, so the equivalent reward equals `reward`
    honeypots = set(model.honeypots)
    rewards = [e for e in doc["rewards"] if e["state"] not in honeypots]
    for entry in doc["transitions"]:
        s = entry["state"]
        if s not in honeypots:
            continue
        for t in sorted(int(k) for k in entry["dist"]):
            rewards.append({"state": s, "action": entry["action"], "to": t, "r1": reward})
    doc["rewards"] = rewards
    return load_scenario(doc)


def _criteria(model: SmdpModel, tol: float) -> list[SweepRow]:
    normal = _require_normal(model)
    solved = value_iteration(model, tol=tol)
    gen = build_generator(model, solved.policy)
    degenerate = bool(sum(gen.q[normal, t] for t in model.honeypots) <= 0.0)
    rows = []
    for start in range(model.n_states):
        if start == model.absorbing_state:
            continue
        p0 = np.zeros(model.n_states)
        p0[start] = 1.0
        limiting = limiting_occupancy(gen, p0)
        expected = float(np.dot(limiting.dist, solved.values.values))
        rows.append(SweepRow(
            param=0.0,
            start=start,
            stationary_normal=float(limiting.dist[normal]),
            v_normal=solved.values[normal],
            expected_utility=expected,
            degenerate=degenerate,
        ))
    return rows


def _with_param(rows: list[SweepRow], param: float) -> list[SweepRow]:
    return [SweepRow(param, r.start, r.stationary_normal, r.v_normal, r.expected_utility, r.degenerate)
            for r in rows]


def sweep_persistence(model: SmdpModel, lambda_grid, tol: float = 1e-8) -> list[SweepRow]:
    """Criteria table over attraction-rate values; each point is solved from scratch."""
    grid = [float(x) for x in lambda_grid]
    if not grid:
        raise ValueError("lambda grid must be non-empty")
    if any(x <= 0.0 for x in grid):
        raise ValueError("persistence rates must be positive")
    out: list[SweepRow] = []
    for lam in grid:
        out.extend(_with_param(_criteria(with_persistence(model, lam), tol), lam))
    return out


def sweep_intelligence(model: SmdpModel, p_grid, tol: float = 1e-8) -> list[SweepRow]:
    """Criteria table over attraction-failure probabilities."""
    grid = [float(x) for x in p_grid]
    if not grid:
        raise ValueError("p grid must be non-empty")
    if any(not 0.0 <= x <= 1.0 for x in grid):
        raise ValueError("failure probabilities must lie in [0, 1]")
    out: list[SweepRow] = []
    for p in grid:
        out.extend(_with_param(_criteria(with_intelligence(model, p), tol), p))
    return out
