import math

import numpy as np
import pytest

import hpengage as hp
from hpengage.model import Action

from conftest import two_state_doc


def _all_passive(model):
    choice = {}
    for s in range(model.n_states):
        acts = model.action_set(s)
        choice[s] = Action.PASSIVE if Action.PASSIVE in acts else acts[-1]
    return hp.Policy(choice)


# -- reproducibility ---------------------------------------------------------------


def test_identical_seeds_reproduce_paths(desk_model, desk_solved):
    a = hp.simulate_path(desk_model, desk_solved.policy, 1, 200, hp.RngSeed(5, 2).generator())
    b = hp.simulate_path(desk_model, desk_solved.policy, 1, 200, hp.RngSeed(5, 2).generator())
    assert a == b


def test_streams_are_independent(desk_model, desk_solved):
    a = hp.simulate_path(desk_model, desk_solved.policy, 1, 200, hp.RngSeed(5, 0).generator())
    b = hp.simulate_path(desk_model, desk_solved.policy, 1, 200, hp.RngSeed(5, 1).generator())
    assert a != b


def test_rollout_equals_utility_of_logged_path(desk_model, desk_solved):
    events = hp.simulate_path(desk_model, desk_solved.policy, 1, 150, hp.RngSeed(17, 0).generator())
    direct = hp.rollout_discounted_utility(desk_model, desk_solved.policy, 1, 150,
                                           hp.RngSeed(17, 0).generator())
    assert direct == pytest.approx(hp.discounted_utility(events, desk_model.gamma), abs=1e-12)


# -- step ---------------------------------------------------------------------------


def test_step_rejects_inadmissible_action(desk_model):
    rng = hp.RngSeed(1, 0).generator()
    with pytest.raises(ValueError, match="not admissible"):
        hp.step(desk_model, 1, Action.PASSIVE, rng)


def test_step_deterministic_transition_and_sojourn_mean():
    lam = 0.5
    model = hp.load_scenario(two_state_doc(lam=lam))
    rng = hp.RngSeed(77, 0).generator()
    sojourns = np.empty(100000)
    for i in range(sojourns.size):
        ev = hp.step(model, 0, Action.PASSIVE, rng)
        assert ev.next_state == 1
        sojourns[i] = ev.sojourn
    se = sojourns.std(ddof=1) / math.sqrt(sojourns.size)
    assert abs(sojourns.mean() - 1.0 / lam) <= 3.0 * se


def test_step_zero_noise_reward_exact(desk_model):
    doc = hp.serialize_scenario(desk_model)
    doc["noise_sigma"] = 0.0
    model = hp.load_scenario(doc)
    rng = hp.RngSeed(3, 0).generator()
    for _ in range(50):
        ev = hp.step(model, 0, Action.PASSIVE, rng)
        assert ev.rate_reward_obs == model.reward_rate[(0, Action.PASSIVE)]
        assert ev.jump_reward_obs == model.reward_jump[(0, Action.PASSIVE, ev.next_state)]


def test_step_empirical_frequencies_match_kernel(desk_model):
    rng = hp.RngSeed(11, 0).generator()
    n = 100000
    counts = {0: 0, 1: 0, 2: 0}
    for _ in range(n):
        counts[hp.step(desk_model, 0, Action.PASSIVE, rng).next_state] += 1
    for t, p in desk_model.transition[(0, Action.PASSIVE)].items():
        freq = counts[t] / n
        se = math.sqrt(p * (1.0 - p) / n)
        assert abs(freq - p) <= 3.0 * se


# -- rollouts -----------------------------------------------------------------------


def test_zero_reward_rollout_is_zero():
    model = hp.load_scenario(two_state_doc())
    policy = _all_passive(model)
    rng = hp.RngSeed(9, 0).generator()
    for _ in range(20):
        assert hp.rollout_discounted_utility(model, policy, 0, 50, rng) == 0.0


def test_constant_income_rollout_mean():
    # single self-looping state with reward rate c and no jump reward: the
    # discounted income is c/gamma in expectation
    c, gamma = 0.8, 0.4
    doc = {
        "gamma": gamma, "noise_sigma": 0.1, "reward_bound": 10.0,
        "nodes": [{"id": 0, "name": "hp", "kind": "honeypot"},
                  {"id": 1, "name": "out", "kind": "absorbing"}],
        "edges": [[0, 0]],
        "transitions": [
            {"state": 0, "action": "eject", "dist": {"1": 1.0}},
            {"state": 0, "action": "passive", "dist": {"0": 1.0}},
            {"state": 0, "action": "low_interact", "dist": {"1": 1.0}},
            {"state": 0, "action": "high_interact", "dist": {"1": 1.0}},
            {"state": 1, "action": "eject", "dist": {"1": 1.0}},
        ],
        "rates": [
            {"state": 0, "action": "eject", "to": 1, "lambda": 1.0},
            {"state": 0, "action": "passive", "to": 0, "lambda": 1.0},
            {"state": 0, "action": "low_interact", "to": 1, "lambda": 1.0},
            {"state": 0, "action": "high_interact", "to": 1, "lambda": 1.0},
            {"state": 1, "action": "eject", "to": 1, "lambda": 1.0},
        ],
        "rewards": [{"state": 0, "action": "passive", "r2": c}],
    }
    model = hp.load_scenario(doc)
    policy = _all_passive(model)
    u = hp.batch_rollout_utilities(model, policy, 0, 120, 100000, hp.RngSeed(31, 0).generator())
    se = u.std(ddof=1) / math.sqrt(u.size)
    assert abs(u.mean() - c / gamma) <= 3.0 * se


def test_scalar_and_batch_rollouts_agree(desk_model, desk_solved):
    horizon = 80
    scalar_rng = hp.RngSeed(41, 0).generator()
    scalar = np.array([
        hp.rollout_discounted_utility(desk_model, desk_solved.policy, 1, horizon, scalar_rng)
        for _ in range(4000)
    ])
    batch = hp.batch_rollout_utilities(desk_model, desk_solved.policy, 1, horizon, 4000,
                                       hp.RngSeed(41, 1).generator())
    se = math.hypot(scalar.std(ddof=1) / math.sqrt(scalar.size),
                    batch.std(ddof=1) / math.sqrt(batch.size))
    assert abs(scalar.mean() - batch.mean()) <= 3.0 * se


def test_absorbing_start_rollout():
    model = hp.load_scenario(two_state_doc(r1_eject=2.0, r2=1.0))
    policy = _all_passive(model)
    rng = hp.RngSeed(1, 0).generator()
    assert hp.rollout_discounted_utility(model, policy, 1, 50, rng) == 0.0
    assert hp.simulate_path(model, policy, 1, 50, rng) == []


# -- hitting times ------------------------------------------------------------------


def test_hitting_source_in_targets(desk_model, desk_solved):
    stats = hp.estimate_hitting_times(desk_model, desk_solved.policy, 0, {0}, 100,
                                      hp.RngSeed(2, 0).generator())
    assert np.all(stats.samples == 0.0)
    assert stats.mean == 0.0


def test_hitting_two_state_mean():
    lam = 0.9
    model = hp.load_scenario(two_state_doc(lam=lam))
    policy = _all_passive(model)
    stats = hp.estimate_hitting_times(model, policy, 0, {1}, 30000, hp.RngSeed(12, 0).generator())
    assert stats.n_censored == 0
    assert abs(stats.mean - 1.0 / lam) <= 3.0 * stats.se


def test_hitting_censoring_reported(desk_model):
    # all-eject policy: the walk from the normal zone dies before reaching hp0
    policy = hp.Policy({0: Action.EJECT, 1: Action.EJECT, 2: Action.EJECT})
    stats = hp.estimate_hitting_times(desk_model, policy, 1, {0}, 500,
                                      hp.RngSeed(21, 0).generator())
    assert stats.n == 0
    assert stats.n_censored == 500
    assert math.isinf(stats.mean)


# -- learning environment ------------------------------------------------------------


def test_env_exposes_model_free_surface(desk_model):
    env = hp.EngagementEnv(desk_model, hp.RngSeed(4, 0).generator())
    assert env.n_states() == 3
    assert env.action_set(1) == (Action.EJECT, Action.ATTRACT)
    assert env.reset(1) == 1
    ev = env.step(Action.ATTRACT)
    assert ev.state == 1
    assert env.state == ev.next_state
    assert env.is_absorbing(2)
    assert not env.is_absorbing(0)
    assert env.gamma == desk_model.gamma
