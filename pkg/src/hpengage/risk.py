"""Policy-induced continuous-time chain analytics.

A fixed policy reduces the decision process to a Markov jump process with
generator q[i][j] = rate(i, pi(i), j) * tr(j | i, pi(i)) for j != i and a
zero-sum diagonal.  On top of that generator this module computes the three
engagement risk metrics: the transient/limiting occupancy distribution, the
first-passage law into a target set, and mean first passage times.

First passage is computed by making the target set absorbing and evolving
the modified semigroup, which for exponential sojourns coincides with the
transform-inversion route but avoids numerical inverse Laplace transforms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import networkx as nx
import numpy as np
from scipy.special import gammaln

from .model import Policy, SmdpModel, StateId

#: Default truncation mass left in the Poisson tail during uniformization.
DEFAULT_TAIL_TOL = 1e-12

#: Entries below this are treated as structural zeros of the generator.
EDGE_EPS = 1e-14


class UnreachableTargetError(ValueError):
    """The requested target set cannot be reached from the source."""


@dataclass(frozen=True, eq=False)
class Generator:
    """Infinitesimal generator; rows sum to zero, off-diagonals nonnegative."""

    q: np.ndarray

    def __post_init__(self) -> None:
        q = self.q
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise ValueError(f"generator must be square, got shape {q.shape}")
        off = q - np.diag(np.diag(q))
        if np.any(off < -EDGE_EPS):
            raise ValueError("generator off-diagonal entries must be nonnegative")
        if np.max(np.abs(q.sum(axis=1))) > 1e-9:
            raise ValueError("generator rows must sum to zero")

    @property
    def n_states(self) -> int:
        return self.q.shape[0]

    @property
    def uniformization_rate(self) -> float:
        return float(np.max(-np.diag(self.q)))


def build_generator(model: SmdpModel, policy: Policy) -> Generator:
    """q[i][j] = lambda_ij(pi(i)) * tr(j|i, pi(i)) for j != i; diagonal closes rows.

    Self-transition mass drops out (a self jump is invisible to the chain);
    the absorbing state's row is identically zero.
    """
    policy.validate(model)
    n = model.n_states
    q = np.zeros((n, n))
    for s in range(n):
        if s == model.absorbing_state:
            continue
        row = model.row(s, policy.action(s))
        for t, p, lam in zip(row.succ, row.prob, row.rate):
            if int(t) != s:
                q[s, int(t)] += lam * p
        q[s, s] = -np.sum(q[s]) + q[s, s]
    return Generator(q)


def _poisson_weights(s: float, tail_tol: float) -> tuple[int, np.ndarray]:
    """Poisson(s) pmf over a window [k0, k0+len-1] holding mass >= 1 - tail_tol.

    Small arguments use the forward recurrence; large ones a +-12 sigma window
    around the mode evaluated in log space and normalized (the true mass
    outside such a window is far below any supported tail_tol, and
    normalization removes the gammaln cancellation error in the common
    exponent).
    """
    if s <= 0.0:
        return 0, np.ones(1)
    if s < 30.0:
        terms = [math.exp(-s)]
        cum = terms[0]
        cap = int(s + 20.0 * math.sqrt(s) + 200.0)
        for k in range(1, cap + 1):
            terms.append(terms[-1] * s / k)
            cum += terms[-1]
            if cum >= 1.0 - tail_tol:
                break
        return 0, np.asarray(terms)
    half = int(12.0 * math.sqrt(s)) + 50
    k0 = max(0, int(s) - half)
    ks = np.arange(k0, int(s) + half + 1)
    logw = -s + ks * math.log(s) - gammaln(ks + 1.0)
    logw -= logw.max()
    w = np.exp(logw)
    w /= w.sum()
    cum = np.cumsum(w)
    lo = int(np.searchsorted(cum, tail_tol / 2.0))
    hi = int(np.searchsorted(cum, 1.0 - tail_tol / 2.0, side="right")) + 1
    hi = min(hi, w.size)
    return k0 + lo, w[lo:hi]


def _matrix_power_apply(M: np.ndarray, k: int, p: np.ndarray) -> np.ndarray:
    """M^k @ p by binary exponentiation; used to jump to a far Poisson window."""
    result = p
    base = M
    while k > 0:
        if k & 1:
            result = base @ result
        base = base @ base
        k >>= 1
    return result


def _step_distribution(gen: Generator, p: np.ndarray, dt: float, tail_tol: float) -> np.ndarray:
    """Advance a distribution by dt via the uniformized Poisson series."""
    lam = gen.uniformization_rate
    if lam <= 0.0 or dt == 0.0:
        return p.copy()
    M = np.eye(gen.n_states) + gen.q.T / lam
    k0, w = _poisson_weights(lam * dt, tail_tol)
    vec = _matrix_power_apply(M, k0, p) if k0 > 0 else p
    out = w[0] * vec
    for wk in w[1:]:
        vec = M @ vec
        out += wk * vec
    return out


@dataclass(frozen=True, eq=False)
class OccupancyCurve:
    times: np.ndarray
    dist: np.ndarray  # shape (len(times), n_states)


def transient_occupancy(gen: Generator, p0, times, tail_tol: float = DEFAULT_TAIL_TOL) -> OccupancyCurve:
    """Occupancy distribution P(t) = exp(Q^T t) p0 on a sorted time grid.

    Uses uniformization: with a rate Lambda >= max_i |q_ii| the semigroup is a
    Poisson(Lambda*t) mixture of powers of M = I + Q^T/Lambda, truncated when
    the tail mass drops below tail_tol.  M is column-stochastic, so every
    iterate stays a probability vector.
    """
    p0 = np.asarray(p0, dtype=float)
    if p0.shape != (gen.n_states,):
        raise ValueError(f"p0 must have shape ({gen.n_states},), got {p0.shape}")
    if np.any(p0 < 0.0) or abs(p0.sum() - 1.0) > 1e-9:
        raise ValueError("p0 must be a probability distribution")
    times = np.asarray(list(times), dtype=float)
    if times.size and (np.any(times < 0.0) or np.any(np.diff(times) < 0.0)):
        raise ValueError("times must be nonnegative and sorted ascending")

    dist = np.empty((times.size, gen.n_states))
    current = p0
    t_prev = 0.0
    for i, t in enumerate(times):
        current = _step_distribution(gen, current, float(t) - t_prev, tail_tol)
        t_prev = float(t)
        dist[i] = current
    return OccupancyCurve(times=times, dist=dist)


# -- limiting behavior ---------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ClosedClass:
    states: tuple[StateId, ...]
    weight: float                 # absorption probability from p0
    stationary: np.ndarray        # distribution over `states`


@dataclass(frozen=True, eq=False)
class LimitingOccupancy:
    dist: np.ndarray              # absorption-weighted mixture over all states
    classes: tuple[ClosedClass, ...]
    mixed: bool                   # more than one closed class is reachable


def _digraph(q: np.ndarray) -> nx.DiGraph:
    g = nx.DiGraph()
    n = q.shape[0]
    g.add_nodes_from(range(n))
    for i in range(n):
        for j in range(n):
            if i != j and q[i, j] > EDGE_EPS:
                g.add_edge(i, j)
    return g


def _stationary_of_class(q: np.ndarray, states: tuple[int, ...]) -> np.ndarray:
    if len(states) == 1:
        return np.ones(1)
    idx = np.asarray(states)
    sub = q[np.ix_(idx, idx)]
    A = sub.T.copy()
    A[-1, :] = 1.0
    b = np.zeros(len(states))
    b[-1] = 1.0
    pi = np.linalg.solve(A, b)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def limiting_occupancy(gen: Generator, p0) -> LimitingOccupancy:
    """Long-run occupancy from p0 via closed-class decomposition.

    Reachable closed communicating classes each carry their unique stationary
    vector; transient mass splits between them according to absorption
    probabilities.  With a single reachable class the result is that class's
    stationary distribution; with several the result is the exact mixture and
    the `mixed` flag is set so callers can surface the decomposition.
    """
    p0 = np.asarray(p0, dtype=float)
    if p0.shape != (gen.n_states,):
        raise ValueError(f"p0 must have shape ({gen.n_states},), got {p0.shape}")
    if np.any(p0 < 0.0) or abs(p0.sum() - 1.0) > 1e-9:
        raise ValueError("p0 must be a probability distribution")

    g = _digraph(gen.q)
    support = [int(i) for i in np.nonzero(p0 > 0.0)[0]]
    reachable = set(support)
    for s in support:
        reachable |= nx.descendants(g, s)

    cond = nx.condensation(g)
    closed: list[tuple[int, ...]] = []
    for comp_id in cond.nodes:
        members = tuple(sorted(cond.nodes[comp_id]["members"]))
        if cond.out_degree(comp_id) == 0 and any(m in reachable for m in members):
            closed.append(members)
    closed.sort()
    if not closed:  # cannot happen in a finite chain
        raise RuntimeError("no closed communicating class found")

    closed_states = {s for members in closed for s in members}
    transient = sorted(reachable - closed_states)
    weights = []
    if transient:
        idx_t = np.asarray(transient)
        Qtt = gen.q[np.ix_(idx_t, idx_t)]
        for members in closed:
            idx_c = np.asarray(members)
            inflow = gen.q[np.ix_(idx_t, idx_c)].sum(axis=1)
            absorb = np.linalg.solve(Qtt, -inflow)
            w = float(sum(p0[s] for s in members))
            w += float(np.dot(p0[idx_t], absorb))
            weights.append(w)
    else:
        weights = [float(sum(p0[s] for s in members)) for members in closed]

    classes = []
    dist = np.zeros(gen.n_states)
    for members, w in zip(closed, weights):
        pi = _stationary_of_class(gen.q, members)
        classes.append(ClosedClass(states=members, weight=w, stationary=pi))
        dist[np.asarray(members)] += w * pi
    return LimitingOccupancy(dist=dist, classes=tuple(classes), mixed=len(closed) > 1)


# -- first passage ---------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FptResult:
    source: StateId
    targets: frozenset[StateId]
    grid: np.ndarray
    cdf: np.ndarray
    density: np.ndarray
    mean: float
    absorption_certain: bool


def _absorbed_generator(gen: Generator, targets: frozenset[int]) -> Generator:
    q = gen.q.copy()
    for d in targets:
        q[d, :] = 0.0
    return Generator(q)


def first_passage(gen: Generator, source: StateId, targets, grid,
                  tail_tol: float = DEFAULT_TAIL_TOL) -> FptResult:
    """Law of the first entry time into `targets` starting from `source`.

    Target rows are zeroed (made absorbing); the cdf is the accumulated mass
    on the target set and the density is the instantaneous probability flux
    q[l, d] into it.  When the target set is not almost surely reached the
    cdf plateaus below 1 and the mean is reported as infinity.
    """
    targets = frozenset(int(t) for t in targets)
    if not targets:
        raise ValueError("targets must be non-empty")
    if source in targets:
        raise ValueError(f"source {source} lies inside the target set")
    mod = _absorbed_generator(gen, targets)

    g = _digraph(gen.q)
    hit_possible = bool(targets & ({source} | nx.descendants(g, source)))
    if not hit_possible:
        grid_arr = np.asarray(list(grid), dtype=float)
        return FptResult(source=source, targets=targets, grid=grid_arr,
                         cdf=np.zeros(grid_arr.size), density=np.zeros(grid_arr.size),
                         mean=math.inf, absorption_certain=False)

    p0 = np.zeros(gen.n_states)
    p0[source] = 1.0
    curve = transient_occupancy(mod, p0, grid, tail_tol=tail_tol)
    t_idx = np.asarray(sorted(targets))
    others = np.asarray([i for i in range(gen.n_states) if i not in targets])
    cdf = curve.dist[:, t_idx].sum(axis=1)
    flux = gen.q[np.ix_(others, t_idx)].sum(axis=1)
    density = curve.dist[:, others] @ flux

    means, finite = mfpt_vector(gen, targets)
    certain = bool(finite[source])
    mean = float(means[source]) if certain else math.inf
    return FptResult(source=source, targets=targets, grid=curve.times,
                     cdf=cdf, density=density, mean=mean, absorption_certain=certain)


def mfpt(gen: Generator, targets) -> np.ndarray:
    """Mean first passage times into `targets` for every state.

    Solves 1 + sum_l q[i][l] * m[l] = 0 for i outside the target set, with
    m = 0 on it.  States that can reach a closed set disjoint from the
    targets have a positive chance of never arriving; their entries come back
    infinite.
    """
    return mfpt_vector(gen, targets)[0]


def mfpt_vector(gen: Generator, targets) -> tuple[np.ndarray, np.ndarray]:
    """Like mfpt, plus a boolean vector marking the finite (certain-arrival) entries."""
    targets = frozenset(int(t) for t in targets)
    if not targets:
        raise ValueError("targets must be non-empty")
    n = gen.n_states
    # reachability must ignore paths through the targets: once there, the
    # passage has happened, so work on the target-absorbed graph
    g = _digraph(_absorbed_generator(gen, targets).q)
    can_reach = set(targets)
    for d in targets:
        can_reach |= nx.ancestors(g, d)
    # `dead` states cannot reach the targets at all; anything that can reach a
    # dead state escapes with positive probability, so its mean is infinite.
    dead = set(range(n)) - can_reach
    doomed = set(dead)
    for b in dead:
        doomed |= nx.ancestors(g, b)
    doomed -= targets

    finite_states = sorted(set(range(n)) - targets - doomed)
    means = np.zeros(n)
    finite = np.ones(n, dtype=bool)
    for s in doomed:
        means[s] = math.inf
        finite[s] = False
    if finite_states:
        idx = np.asarray(finite_states)
        A = gen.q[np.ix_(idx, idx)]
        m = np.linalg.solve(A, -np.ones(idx.size))
        means[idx] = m
    return means, finite


def attraction_efficiency(model: SmdpModel, policy: Policy, source: StateId,
                          target: StateId, tail_tol: float = DEFAULT_TAIL_TOL) -> tuple[float, float]:
    """(threshold, probability): the mean first passage time from source to
    target, and the chance of arriving within it."""
    gen = build_generator(model, policy)
    means, finite = mfpt_vector(gen, {target})
    if not finite[source]:
        raise UnreachableTargetError(
            f"state {target} is not almost surely reached from {source} under this policy")
    threshold = float(means[source])
    result = first_passage(gen, source, {target}, [threshold], tail_tol=tail_tol)
    return threshold, float(result.cdf[-1])


def default_time_grid(horizon: float, points: int = 200) -> np.ndarray:
    """Log-spaced grid from 1e-2 to the horizon (typically 5x the largest MFPT)."""
    if horizon <= 1e-2:
        horizon = 1.0
    return np.logspace(-2.0, math.log10(horizon), points)
