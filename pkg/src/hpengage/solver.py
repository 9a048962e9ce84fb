"""Discounted solver: equivalent-MDP transform, value iteration, policy evaluation.

The continuous-time objective is reduced to a discrete fixed point by
replacing each sojourn with the Laplace transform of its density at the
discount rate: for an exponential sojourn with rate lambda the transform is
lambda/(lambda+gamma), which acts as a stage discount, and the constant
reward rate integrates to r2/gamma * (1 - lambda/(lambda+gamma)).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import (
    Action,
    Policy,
    RegulationReport,
    SmdpModel,
    StateId,
    ValueFunction,
    check_regulation,
)


class NonConvergenceError(RuntimeError):
    """Value iteration exhausted max_iter before meeting its tolerance."""

    def __init__(self, residual: float, iterations: int, trace: list[float]):
        super().__init__(f"no convergence after {iterations} iterations, residual {residual!r}")
        self.residual = residual
        self.iterations = iterations
        self.trace = trace


class SingularSystemError(RuntimeError):
    """Policy-evaluation linear system was singular at working precision."""


def laplace_sojourn(lam: float, gamma: float) -> float:
    """Laplace transform of an Exponential(lam) density at gamma: lam/(lam+gamma)."""
    if lam <= 0.0:
        raise ValueError(f"rate must be positive, got {lam}")
    if gamma <= 0.0:
        raise ValueError(f"discount rate must be positive, got {gamma}")
    return lam / (lam + gamma)


@dataclass(frozen=True, eq=False)
class BellmanOperands:
    """Precomputed per-(state, action) backup ingredients.

    weight(s,a) = prob * z carries both the transition probability and the
    stage discount, so a backup is stage_reward + weight . v[succ] and
    beta(s,a) is the weight sum.
    """

    z_gamma: dict[tuple[StateId, Action, StateId], float]
    r_gamma: dict[tuple[StateId, Action, StateId], float]
    beta: dict[tuple[StateId, Action], float]
    succ: dict[tuple[StateId, Action], np.ndarray] = field(repr=False)
    weight: dict[tuple[StateId, Action], np.ndarray] = field(repr=False)
    stage_reward: dict[tuple[StateId, Action], float] = field(repr=False)

    @property
    def beta_max(self) -> float:
        return max(self.beta.values())


def build_operands(model: SmdpModel) -> BellmanOperands:
    z_gamma: dict[tuple[StateId, Action, StateId], float] = {}
    r_gamma: dict[tuple[StateId, Action, StateId], float] = {}
    beta: dict[tuple[StateId, Action], float] = {}
    succ: dict[tuple[StateId, Action], np.ndarray] = {}
    weight: dict[tuple[StateId, Action], np.ndarray] = {}
    stage_reward: dict[tuple[StateId, Action], float] = {}
    for (s, a), row in model.rows.items():
        z = row.rate / (row.rate + model.gamma)
        r2 = model.reward_rate.get((s, a), 0.0)
        r_eq = row.r1 + (r2 / model.gamma) * (1.0 - z)
        for t, zv, rv in zip(row.succ, z, r_eq):
            z_gamma[(s, a, int(t))] = float(zv)
            r_gamma[(s, a, int(t))] = float(rv)
        w = row.prob * z
        succ[(s, a)] = row.succ
        weight[(s, a)] = w
        beta[(s, a)] = float(np.sum(w))
        stage_reward[(s, a)] = float(np.dot(row.prob, r_eq))
    return BellmanOperands(z_gamma=z_gamma, r_gamma=r_gamma, beta=beta,
                           succ=succ, weight=weight, stage_reward=stage_reward)


def bellman_backup(operands: BellmanOperands, model: SmdpModel,
                   v: ValueFunction | np.ndarray) -> tuple[ValueFunction, Policy]:
    """One optimality sweep: per-state max over admissible actions.

    Ties break toward the smaller action id (EJECT < PASSIVE < LOW_INTERACT
    < HIGH_INTERACT < ATTRACT).
    """
    vals = v.values if isinstance(v, ValueFunction) else np.asarray(v, dtype=float)
    out = np.empty(model.n_states)
    choice: dict[StateId, Action] = {}
    for s in range(model.n_states):
        best = -np.inf
        best_a = None
        for a in model.action_set(s):
            q = operands.stage_reward[(s, a)] + float(np.dot(
                operands.weight[(s, a)], vals[operands.succ[(s, a)]]))
            if q > best:
                best, best_a = q, a
        out[s] = best
        choice[s] = best_a
    return ValueFunction(out), Policy(choice)


@dataclass(frozen=True, eq=False)
class SolveResult:
    values: ValueFunction
    policy: Policy
    residual_trace: list[float]
    iterations: int
    operands: BellmanOperands
    regulation: RegulationReport


def value_iteration(model: SmdpModel, tol: float = 1e-8, max_iter: int = 10000) -> SolveResult:
    """Iterate optimality sweeps from v=0 until the weighted sup-norm rule holds.

    Stops when successive iterates differ by at most
    tol * (1 - beta_max) / (2 * beta_max), which bounds the Bellman residual
    of the returned values by tol.
    """
    if tol <= 0.0:
        raise ValueError(f"tol must be positive, got {tol}")
    regulation = check_regulation(model)
    if not regulation.passed:
        raise NonConvergenceError(np.inf, 0, [])
    operands = build_operands(model)
    beta_max = operands.beta_max
    threshold = tol * (1.0 - beta_max) / (2.0 * beta_max) if beta_max > 0 else np.inf

    v = np.zeros(model.n_states)
    trace: list[float] = []
    for it in range(1, max_iter + 1):
        new_v, policy = bellman_backup(operands, model, v)
        diff = float(np.max(np.abs(new_v.values - v)))
        trace.append(diff)
        v = new_v.values
        if diff <= threshold:
            return SolveResult(values=ValueFunction(v), policy=policy, residual_trace=trace,
                               iterations=it, operands=operands, regulation=regulation)
    raise NonConvergenceError(trace[-1], max_iter, trace)


def policy_evaluation(model: SmdpModel, policy: Policy,
                      operands: BellmanOperands | None = None) -> ValueFunction:
    """Exact fixed point of the policy's backup: solve (I - B_pi) v = r_pi.

    B_pi stacks the discounted transition weights of the chosen actions; its
    spectral radius is below 1 whenever the regulation check passes, so the
    dense solve is well posed.
    """
    policy.validate(model)
    if operands is None:
        operands = build_operands(model)
    n = model.n_states
    B = np.zeros((n, n))
    r = np.zeros(n)
    for s in range(n):
        a = policy.action(s)
        B[s, operands.succ[(s, a)]] += operands.weight[(s, a)]
        r[s] = operands.stage_reward[(s, a)]
    system = np.eye(n) - B
    try:
        v = np.linalg.solve(system, r)
    except np.linalg.LinAlgError as exc:
        raise SingularSystemError(f"policy evaluation system is singular: {exc}") from None
    residual = float(np.max(np.abs(system @ v - r)))
    scale = max(1.0, float(np.max(np.abs(v))))
    if residual > 1e-8 * scale:
        raise SingularSystemError(f"policy evaluation solve left residual {residual!r}")
    return ValueFunction(v)


@dataclass(frozen=True, eq=False)
class TradeoffGrid:
    penetration: np.ndarray
    reward: np.ndarray
    values: np.ndarray  # shape (len(penetration), len(reward)); v at the target state


def tradeoff_surface(model: SmdpModel, penetration_grid, reward_grid,
                     bridge_states: set[StateId] | None = None,
                     target: StateId | None = None,
                     tol: float = 1e-8) -> TradeoffGrid:
    """Value of the target state over a (penetration, investigation reward) grid.

    Each cell re-solves a perturbed model built by with_tradeoff; see that
    function for the exact perturbation rule.
    """
    from .sweeps import with_tradeoff  # local import: sweeps builds on solver

    p_grid = np.asarray(list(penetration_grid), dtype=float)
    r_grid = np.asarray(list(reward_grid), dtype=float)
    if p_grid.size == 0 or r_grid.size == 0:
        raise ValueError("penetration and reward grids must be non-empty")
    if np.any((p_grid < 0.0) | (p_grid >= 1.0)):
        raise ValueError("penetration probabilities must lie in [0, 1)")
    bridges = tuple(sorted(bridge_states)) if bridge_states is not None else model.bridge_states()
    for s in bridges:
        if s not in model.bridge_states():
            raise ValueError(f"state {s} is not a honeypot adjacent to the normal zone")
    if target is None:
        raise ValueError("a target state is required")

    values = np.empty((p_grid.size, r_grid.size))
    for i, p in enumerate(p_grid):
        for j, r in enumerate(r_grid):
            perturbed = with_tradeoff(model, float(p), float(r), bridges)
            values[i, j] = value_iteration(perturbed, tol=tol).values[target]
    return TradeoffGrid(penetration=p_grid, reward=r_grid, values=values)
