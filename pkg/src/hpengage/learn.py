"""Model-free tabular Q-learning against the engagement simulator.

The update target for an observed epoch (s, a, sojourn tau, s') is

    r1_obs + r2_obs * (1 - exp(-g*tau)) / g + exp(-g*tau) * max_a' Q(s', a')

with a per-pair learning rate kc / (visits - 1 + kc), which satisfies the
Robbins-Monro conditions and hands the first visit a full overwrite.
Exploration is epsilon-greedy with an optional linear decay schedule and an
optional exclusion of the (known-terminal) eject action from random draws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .model import Action, NodeKind, Policy, SmdpModel, StateId
from .sim import EngagementEnv, RngSeed, TrajectoryEvent


@dataclass
class QTable:
    """Action-value estimates with per-pair visit counts.

    Entries exist exactly for the admissible pairs of the owning process;
    `actions` records the admissible set per state.
    """

    q: dict[tuple[StateId, Action], float]
    visits: dict[tuple[StateId, Action], int]
    actions: dict[StateId, tuple[Action, ...]]

    @classmethod
    def zeros(cls, action_sets: dict[StateId, tuple[Action, ...]]) -> "QTable":
        q = {(s, a): 0.0 for s, acts in action_sets.items() for a in acts}
        return cls(q=q, visits={k: 0 for k in q}, actions=dict(action_sets))

    @classmethod
    def for_model(cls, model: SmdpModel) -> "QTable":
        return cls.zeros({s: model.action_set(s) for s in range(model.n_states)})

    def best(self, s: StateId) -> tuple[Action, float]:
        best_a, best_q = None, -math.inf
        for a in self.actions[s]:
            v = self.q[(s, a)]
            if v > best_q:
                best_a, best_q = a, v
        return best_a, best_q

    def copy(self) -> "QTable":
        return QTable(q=dict(self.q), visits=dict(self.visits), actions=dict(self.actions))


@dataclass(frozen=True)
class LearnConfig:
    kc: float = 1.0
    epsilon: float = 0.2
    steps: int = 5000
    replications: int = 1
    seed: RngSeed = RngSeed(0, 0)
    epsilon_decay: tuple[int, float] | None = None  # (start step, end value)
    forbid_eject_exploration: bool = False
    start: StateId | None = None          # default: normal zone, else state 0
    track_state: StateId | None = None    # tracked statistic: max_a Q(track_state, a)
    check_bounds: bool = False            # assert the discounted iterate bound each step

    def __post_init__(self) -> None:
        if self.kc <= 0.0:
            raise ValueError(f"kc must be positive, got {self.kc}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")
        if self.steps < 0:
            raise ValueError(f"steps must be nonnegative, got {self.steps}")
        if self.replications < 1:
            raise ValueError(f"replications must be at least 1, got {self.replications}")

    def epsilon_at(self, step: int) -> float:
        """Linear decay from `epsilon` at the decay start to the end value at `steps`."""
        if self.epsilon_decay is None:
            return self.epsilon
        start, end_value = self.epsilon_decay
        if step <= start:
            return self.epsilon
        if self.steps <= start:
            return end_value
        frac = min(1.0, (step - start) / (self.steps - start))
        return self.epsilon + frac * (end_value - self.epsilon)


def learning_rate(kc: float, visit_count: int) -> float:
    """kc / (visit_count - 1 + kc); visit_count counts the current visit."""
    if kc <= 0.0:
        raise ValueError(f"kc must be positive, got {kc}")
    if visit_count < 1:
        raise ValueError(f"visit_count must be at least 1, got {visit_count}")
    return kc / (visit_count - 1 + kc)


def q_update(table: QTable, event: TrajectoryEvent, gamma: float, kc: float) -> QTable:
    """Apply one sampled-epoch update in place; exactly one entry changes."""
    key = (event.state, event.action)
    table.visits[key] += 1
    alpha = learning_rate(kc, table.visits[key])
    decay = math.exp(-gamma * event.sojourn)
    _, cont = table.best(event.next_state)
    target = (event.jump_reward_obs
              + event.rate_reward_obs * (1.0 - decay) / gamma
              + decay * cont)
    table.q[key] = (1.0 - alpha) * table.q[key] + alpha * target
    return table


def select_action(table: QTable, state: StateId, epsilon: float,
                  config: LearnConfig, rng: np.random.Generator) -> Action:
    """Epsilon-greedy over the admissible actions, ties toward the smaller id.

    When forbid_eject_exploration is set, random draws never pick EJECT at a
    state with alternatives (its outcome is known); the greedy branch still may.
    """
    actions = table.actions[state]
    if epsilon > 0.0 and rng.random() < epsilon:
        pool = actions
        if config.forbid_eject_exploration and len(actions) > 1:
            pool = tuple(a for a in actions if a is not Action.EJECT)
        if not pool:
            raise ValueError(f"no explorable actions in state {state}")
        return pool[int(rng.integers(len(pool)))]
    best_a, _ = table.best(state)
    return best_a


@dataclass(frozen=True)
class TraceRecord:
    step: int
    replication: int
    tracked_q: float
    epsilon: float
    state: StateId
    action: Action
    sojourn: float


@dataclass(frozen=True, eq=False)
class LearnResult:
    table: QTable                 # table of replication 0
    traces: np.ndarray            # (replications, steps) tracked statistic
    mean_q: np.ndarray            # per-step mean across replications
    var_q: np.ndarray             # per-step variance across replications (ddof=1)
    records: list[TraceRecord]
    resets: int                   # absorption resets summed over replications


def q_learning_replication(env, config: LearnConfig, rng: np.random.Generator,
                           replication: int = 0,
                           record: bool = True) -> tuple[QTable, np.ndarray, list[TraceRecord], int]:
    """One learning run against an environment exposing reset/step/action_set.

    The environment contract is model-free: only sampled transitions, sojourns
    and observed rewards cross the boundary.
    """
    table = QTable.zeros({s: env.action_set(s) for s in range(env.n_states())})
    start = config.start if config.start is not None else 0
    track = config.track_state if config.track_state is not None else start
    q_bound = _iterate_bound(env) if config.check_bounds else math.inf

    state = env.reset(start)
    trace = np.empty(config.steps)
    records: list[TraceRecord] = []
    resets = 0
    for k in range(config.steps):
        eps = config.epsilon_at(k)
        a = select_action(table, state, eps, config, rng)
        ev = env.step(a, epoch=k)
        q_update(table, ev, env.gamma, config.kc)
        if config.check_bounds:
            worst = max(abs(v) for v in table.q.values())
            assert worst <= q_bound + 1e-9, f"Q iterate {worst} escaped bound {q_bound}"
        state = ev.next_state
        if env.is_absorbing(state):
            resets += 1
            state = env.reset(start)
        _, tracked = table.best(track)
        trace[k] = tracked
        if record:
            records.append(TraceRecord(step=k, replication=replication, tracked_q=tracked,
                                       epsilon=eps, state=ev.state, action=ev.action,
                                       sojourn=ev.sojourn))
    return table, trace, records, resets


def _iterate_bound(env) -> float:
    # reward_bound / (1 - beta_max) for model-backed environments; the check
    # presumes noiseless rewards
    from .model import check_regulation

    model = getattr(env, "model", None)
    if model is None:
        return math.inf
    beta_max = check_regulation(model).beta_max
    return model.reward_bound / (1.0 - beta_max)


def run_q_learning(model: SmdpModel, config: LearnConfig, record: bool = True) -> LearnResult:
    """Run `replications` independent learning loops and aggregate their traces.

    Each replication owns an RNG substream derived from (seed, stream,
    replication), so results do not depend on execution order.  Episodes
    restart from the configured start state (default: the normal zone) on
    absorption, modeling the next intruder's arrival.
    """
    start = config.start
    if start is None:
        start = model.normal_state if model.normal_state is not None else 0
        config = replace(config, start=start)
    if model.kinds[start] is NodeKind.ABSORBING:
        raise ValueError("start state must not be absorbing")

    traces = np.empty((config.replications, config.steps))
    records: list[TraceRecord] = []
    table0: QTable | None = None
    resets = 0
    for rep in range(config.replications):
        env = EngagementEnv(model, config.seed.generator(rep))
        table, trace, recs, n_resets = q_learning_replication(env, config, env.rng,
                                                              replication=rep, record=record)
        traces[rep] = trace
        records.extend(recs)
        resets += n_resets
        if rep == 0:
            table0 = table
    mean_q = traces.mean(axis=0) if config.steps else np.empty(0)
    if config.replications > 1 and config.steps:
        var_q = traces.var(axis=0, ddof=1)
    else:
        var_q = np.zeros(config.steps)
    return LearnResult(table=table0, traces=traces, mean_q=mean_q, var_q=var_q,
                       records=records, resets=resets)


def greedy_policy(table: QTable) -> Policy:
    """Per-state argmax with the deterministic tie-break order."""
    return Policy({s: table.best(s)[0] for s in table.actions})
