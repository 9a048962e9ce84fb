import numpy as np
import pytest

import hpengage as hp

ACTIONS_HP = ("eject", "passive", "low_interact", "high_interact")


def two_state_doc(lam=0.5, gamma=0.1, r1_eject=0.0, r2=0.0, noise=0.0):
    """Minimal chain: one honeypot that only terminates, plus the absorbing state."""
    transitions = [{"state": 0, "action": a, "dist": {"1": 1.0}} for a in ACTIONS_HP]
    transitions.append({"state": 1, "action": "eject", "dist": {"1": 1.0}})
    rates = [{"state": 0, "action": a, "to": 1, "lambda": lam} for a in ACTIONS_HP]
    rates.append({"state": 1, "action": "eject", "to": 1, "lambda": 1.0})
    rewards = []
    if r1_eject:
        rewards.append({"state": 0, "action": "eject", "to": 1, "r1": r1_eject})
    if r2:
        rewards.extend({"state": 0, "action": a, "r2": r2} for a in ACTIONS_HP if a != "eject")
    return {
        "gamma": gamma,
        "noise_sigma": noise,
        "reward_bound": 50.0,
        "nodes": [
            {"id": 0, "name": "decoy", "kind": "honeypot"},
            {"id": 1, "name": "out", "kind": "absorbing"},
        ],
        "edges": [],
        "transitions": transitions,
        "rates": rates,
        "rewards": rewards,
    }


def random_doc(rng, n_honeypots=3, with_normal=True, gamma=None):
    """Random valid scenario over a complete topology; rates destination-dependent."""
    n_nonabs = n_honeypots + (1 if with_normal else 0)
    n = n_nonabs + 1
    absorbing = n - 1
    gamma = float(gamma if gamma is not None else rng.uniform(0.05, 1.0))
    nodes = [{"id": i, "name": f"hp{i}", "kind": "honeypot"} for i in range(n_honeypots)]
    if with_normal:
        nodes.append({"id": n_honeypots, "name": "prod", "kind": "normal"})
    nodes.append({"id": absorbing, "name": "out", "kind": "absorbing"})
    edges = [[i, j] for i in range(n_nonabs) for j in range(n_nonabs)]

    transitions, rates, rewards = [], [], []
    for s in range(n_nonabs):
        actions = ACTIONS_HP if nodes[s]["kind"] == "honeypot" else ("eject", "attract")
        for a in actions:
            n_succ = int(rng.integers(1, n + 1))
            succ = sorted(rng.choice(n, size=n_succ, replace=False).tolist())
            probs = rng.dirichlet(np.ones(n_succ))
            transitions.append({
                "state": s, "action": a,
                "dist": {str(t): float(p) for t, p in zip(succ, probs)},
            })
            for t in succ:
                rates.append({"state": s, "action": a, "to": int(t),
                              "lambda": float(rng.uniform(0.1, 3.0))})
                rewards.append({"state": s, "action": a, "to": int(t),
                                "r1": float(rng.uniform(-1.0, 1.0))})
            rewards.append({"state": s, "action": a, "r2": float(rng.uniform(-1.0, 1.0))})
    transitions.append({"state": absorbing, "action": "eject", "dist": {str(absorbing): 1.0}})
    rates.append({"state": absorbing, "action": "eject", "to": absorbing, "lambda": 1.0})
    return {
        "gamma": gamma,
        "noise_sigma": float(rng.uniform(0.0, 0.2)),
        "reward_bound": 3.0 + 1.0 / gamma,
        "nodes": nodes,
        "edges": edges,
        "transitions": transitions,
        "rates": rates,
        "rewards": rewards,
    }


@pytest.fixture(scope="session")
def desk_model():
    return hp.load_scenario_path(hp.bundled_scenario_path("desk3"))


@pytest.fixture(scope="session")
def desk_solved(desk_model):
    return hp.value_iteration(desk_model)


@pytest.fixture(scope="session")
def bundled_model():
    return hp.load_scenario_path(hp.bundled_scenario_path("honeynet13"))


@pytest.fixture(scope="session")
def bundled_solved(bundled_model):
    return hp.value_iteration(bundled_model)
