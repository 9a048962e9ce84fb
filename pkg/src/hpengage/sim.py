"""Trajectory sampling of the engagement process.

Sampling always follows the semi-Markov definition: draw the successor from
the transition kernel first, then the sojourn from the exponential law of the
(state, action, successor) triple, never the induced-generator shortcut.
Discounted reward accrual over a stage uses the closed-form integral of the
constant reward rate, r2 * (exp(-g*T_k) - exp(-g*T_{k+1})) / g.

All randomness flows through numpy PCG64 generators derived from an explicit
(seed, stream) pair, so identical seeds reproduce identical event sequences
across runs and platforms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import Action, NodeKind, Policy, SmdpModel, StateId


@dataclass(frozen=True)
class RngSeed:
    seed: int
    stream: int = 0

    def generator(self, *sub: int) -> np.random.Generator:
        key = (self.stream, *sub) if sub else (self.stream,)
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=key))


@dataclass(frozen=True)
class TrajectoryEvent:
    epoch: int
    state: StateId
    action: Action
    sojourn: float
    next_state: StateId
    jump_reward_obs: float
    rate_reward_obs: float


def _draw(model: SmdpModel, state: StateId, action: Action,
          rng: np.random.Generator) -> tuple[int, float, float, float]:
    """(next_state, sojourn, r1, r2_obs); draw order is fixed for reproducibility."""
    row = model.row(state, action)
    i = int(np.searchsorted(row.cum, rng.random(), side="right"))
    i = min(i, row.succ.size - 1)
    nxt = int(row.succ[i])
    sojourn = float(rng.exponential(1.0 / row.rate[i]))
    noise = float(rng.normal(0.0, model.noise_sigma))
    r2 = model.reward_rate.get((state, action), 0.0) + noise
    return nxt, sojourn, float(row.r1[i]), r2


def step(model: SmdpModel, state: StateId, action: Action,
         rng: np.random.Generator, epoch: int = 0) -> TrajectoryEvent:
    """Sample one decision epoch: successor, sojourn, and observed rewards."""
    if action not in model.action_set(state):
        raise ValueError(f"action {action.wire} is not admissible in state {state}")
    nxt, sojourn, r1, r2 = _draw(model, state, action, rng)
    return TrajectoryEvent(epoch=epoch, state=state, action=action, sojourn=sojourn,
                           next_state=nxt, jump_reward_obs=r1, rate_reward_obs=r2)


def simulate_path(model: SmdpModel, policy: Policy, start: StateId,
                  horizon_epochs: int, rng: np.random.Generator) -> list[TrajectoryEvent]:
    """Roll the policy forward for up to horizon_epochs, stopping on absorption."""
    events: list[TrajectoryEvent] = []
    state = start
    for k in range(horizon_epochs):
        if model.kinds[state] is NodeKind.ABSORBING:
            break
        ev = step(model, state, policy.action(state), rng, epoch=k)
        events.append(ev)
        state = ev.next_state
    return events


def discounted_utility(events: list[TrajectoryEvent], gamma: float) -> float:
    """Exact discounted accrual along a sampled path."""
    total = 0.0
    disc = 1.0
    for ev in events:
        disc_next = disc * math.exp(-gamma * ev.sojourn)
        total += disc * ev.jump_reward_obs + ev.rate_reward_obs * (disc - disc_next) / gamma
        disc = disc_next
    return total


def rollout_discounted_utility(model: SmdpModel, policy: Policy, start: StateId,
                               horizon_epochs: int, rng: np.random.Generator) -> float:
    """One sampled discounted return; equals discounted_utility(simulate_path(...))."""
    total = 0.0
    disc = 1.0
    state = start
    for _ in range(horizon_epochs):
        if model.kinds[state] is NodeKind.ABSORBING:
            break
        nxt, sojourn, r1, r2 = _draw(model, state, policy.action(state), rng)
        disc_next = disc * math.exp(-model.gamma * sojourn)
        total += disc * r1 + r2 * (disc - disc_next) / model.gamma
        disc = disc_next
        state = nxt
    return total


def horizon_for_tail(model: SmdpModel, beta_max: float, tol: float = 1e-6) -> int:
    """Epoch count making the discounted tail bound reward_bound * beta_max^H < tol."""
    if beta_max <= 0.0:
        return 1
    h = math.log(tol / model.reward_bound) / math.log(beta_max)
    return max(1, int(math.ceil(h)))


# -- vectorized Monte Carlo ------------------------------------------------------


def _group_draw(model: SmdpModel, states: np.ndarray, actions: list[Action],
                rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized step for a population of walkers; grouped by (state, action).

    Groups are processed in sorted state order so the draw sequence is a pure
    function of the seed.
    """
    n = states.size
    nxt = np.empty(n, dtype=np.intp)
    sojourn = np.empty(n)
    r1 = np.empty(n)
    r2 = np.empty(n)
    for s in np.unique(states):
        mask = states == s
        row = model.row(int(s), actions[int(s)])
        m = int(mask.sum())
        idx = np.searchsorted(row.cum, rng.random(m), side="right")
        np.clip(idx, 0, row.succ.size - 1, out=idx)
        nxt[mask] = row.succ[idx]
        sojourn[mask] = rng.exponential(1.0, m) / row.rate[idx]
        r1[mask] = row.r1[idx]
        base = model.reward_rate.get((int(s), actions[int(s)]), 0.0)
        r2[mask] = base + rng.normal(0.0, model.noise_sigma, m)
    return nxt, sojourn, r1, r2


def batch_rollout_utilities(model: SmdpModel, policy: Policy, start: StateId,
                            horizon_epochs: int, n_samples: int,
                            rng: np.random.Generator) -> np.ndarray:
    """Discounted returns of n_samples independent rollouts (vectorized)."""
    policy.validate(model)
    actions = [policy.action(s) for s in range(model.n_states)]
    absorbing = model.absorbing_state
    states = np.full(n_samples, start, dtype=np.intp)
    disc = np.ones(n_samples)
    total = np.zeros(n_samples)
    for _ in range(horizon_epochs):
        live = states != absorbing
        if not np.any(live):
            break
        ls = states[live]
        nxt, sojourn, r1, r2 = _group_draw(model, ls, actions, rng)
        d = disc[live]
        d_next = d * np.exp(-model.gamma * sojourn)
        total[live] += d * r1 + r2 * (d - d_next) / model.gamma
        disc[live] = d_next
        states[live] = nxt
    return total


@dataclass(frozen=True, eq=False)
class HittingTimeStats:
    samples: np.ndarray        # hitting times of the non-censored walks, sorted
    n_censored: int
    horizon: float
    mean: float
    se: float

    @property
    def n(self) -> int:
        return self.samples.size


def estimate_hitting_times(model: SmdpModel, policy: Policy, source: StateId, targets,
                           n_samples: int, rng: np.random.Generator,
                           horizon: float | None = None) -> HittingTimeStats:
    """Empirical first-passage times from source into the target set.

    Walks are censored at `horizon` (default 50x the analytic mean when it is
    finite) or as soon as they enter a state from which the targets are
    unreachable.
    """
    from .risk import build_generator, mfpt_vector

    targets = frozenset(int(t) for t in targets)
    if source in targets:
        samples = np.zeros(n_samples)
        return HittingTimeStats(samples=samples, n_censored=0, horizon=0.0, mean=0.0, se=0.0)

    gen = build_generator(model, policy)
    means, finite = mfpt_vector(gen, targets)
    if horizon is None:
        if finite[source]:
            horizon = 50.0 * float(means[source])
        else:
            horizon = 50.0 * float(np.max(means[finite])) if np.any(finite) else 1e3
    dead = ~finite  # includes the absorbing state unless it is a target

    actions = [policy.action(s) for s in range(model.n_states)]
    states = np.full(n_samples, source, dtype=np.intp)
    clock = np.zeros(n_samples)
    hit_time = np.full(n_samples, np.nan)
    censored = np.zeros(n_samples, dtype=bool)
    target_arr = np.asarray(sorted(targets))
    while True:
        live = np.isnan(hit_time) & ~censored
        if not np.any(live):
            break
        ls = states[live]
        nxt, sojourn, _, _ = _group_draw(model, ls, actions, rng)
        t_new = clock[live] + sojourn
        arrived = np.isin(nxt, target_arr)
        over = t_new > horizon
        doomed = dead[nxt]
        idx = np.nonzero(live)[0]
        hit_time[idx[arrived]] = t_new[arrived]
        censored[idx[~arrived & (over | doomed)]] = True
        states[idx] = nxt
        clock[idx] = t_new

    samples = np.sort(hit_time[~np.isnan(hit_time)])
    mean = float(samples.mean()) if samples.size else math.inf
    se = float(samples.std(ddof=1) / math.sqrt(samples.size)) if samples.size > 1 else math.inf
    return HittingTimeStats(samples=samples, n_censored=int(censored.sum()),
                            horizon=float(horizon), mean=mean, se=se)


# -- learning environment --------------------------------------------------------


class EngagementEnv:
    """Model-free facade over the process: exposes step/reset, reward
    observations, action admissibility, and the discount rate, but no
    transition probabilities or sojourn rates."""

    def __init__(self, model: SmdpModel, rng: np.random.Generator):
        self.model = model
        self.rng = rng
        self.gamma = model.gamma
        self._state: StateId = 0

    @property
    def state(self) -> StateId:
        return self._state

    def n_states(self) -> int:
        return self.model.n_states

    def action_set(self, s: StateId) -> tuple[Action, ...]:
        return self.model.action_set(s)

    def is_absorbing(self, s: StateId) -> bool:
        return self.model.kinds[s] is NodeKind.ABSORBING

    def reset(self, start: StateId) -> StateId:
        self._state = start
        return start

    def step(self, action: Action, epoch: int = 0) -> TrajectoryEvent:
        ev = step(self.model, self._state, action, self.rng, epoch=epoch)
        self._state = ev.next_state
        return ev
