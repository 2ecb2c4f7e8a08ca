"""Planning over reward machines.

Value iteration treats the machine as a deterministic MDP whose actions are
the declared outgoing transitions of each state.  The resulting values are
used twice: to pick desired transitions, and as the potential for
potential-based reward shaping.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rm import Label, RewardMachine, rm_step

__all__ = [
    "RmValueTable",
    "RmGreedyPolicy",
    "EquivalentMdp",
    "ConvergenceError",
    "value_iteration",
    "build_equivalent_mdp",
    "tabular_value_iteration",
    "greedy_transitions",
    "greedy_policy",
    "desired_label",
    "shaped_reward",
    "dump_values",
]

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITERS = 1_000_000
DEFAULT_TIE_EPS = 1e-9


class ConvergenceError(RuntimeError):
    def __init__(self, residual: float, iterations: int):
        self.residual = residual
        self.iterations = iterations
        super().__init__(f"value iteration did not converge: residual {residual:.3e} after {iterations} iterations")


@dataclass(frozen=True)
class RmValueTable:
    values: np.ndarray
    gamma: float
    iterations_run: int
    residual: float

    def __getitem__(self, u: int) -> float:
        return float(self.values[u])


@dataclass(frozen=True)
class RmGreedyPolicy:
    # state id -> indices (into rm.transitions[u]) of optimal transitions; terminals absent
    choices: dict[int, tuple[int, ...]]
    tie_epsilon: float

    def __getitem__(self, u: int) -> tuple[int, ...]:
        return self.choices[u]


def _padded_edges(rm: RewardMachine):
    """(S, D) target and reward tables; missing slots self-loop at -inf."""
    n = rm.n_states
    width = max([len(ts) for ts in rm.transitions] + [1])
    dst = np.tile(np.arange(n)[:, None], (1, width))
    rew = np.full((n, width), -np.inf)
    for u, ts in enumerate(rm.transitions):
        if u in rm.terminals:
            continue
        if not ts:
            # states with neither edges nor terminal status only self-loop at reward 0
            rew[u, 0] = 0.0
        for k, t in enumerate(ts):
            dst[u, k] = t.target
            rew[u, k] = t.reward
    return dst, rew


def value_iteration(
    rm: RewardMachine,
    gamma: float = 0.99,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
) -> RmValueTable:
    """Synchronous VI, V(u) = max over declared edges of r + gamma * V(next)."""
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = rm.n_states
    dst, rew = _padded_edges(rm)
    live = np.array(sorted(set(range(n)) - set(rm.terminals)), dtype=np.intp)
    dst, rew = dst[live], rew[live]
    v = np.zeros(n)
    residual = 0.0
    for k in range(1, max_iters + 1):
        new = np.zeros(n)
        new[live] = (rew + gamma * v[dst]).max(axis=1)
        residual = float(np.abs(new - v).max())
        v = new
        if residual < tol:
            return RmValueTable(v, gamma, k, residual)
    raise ConvergenceError(residual, max_iters)


@dataclass(frozen=True)
class EquivalentMdp:
    """Tabular deterministic MDP over abstract states.

    ``action_edges[u][a]`` is the index into ``rm.transitions[u]`` that action
    ``a`` takes; terminal states have a single absorbing action (edge -1).
    """

    n_states: int
    n_actions: int
    transition: np.ndarray  # (S, A, S) probabilities
    reward: np.ndarray  # (S, A, S)
    action_mask: np.ndarray  # (S, A) valid actions
    action_edges: tuple[tuple[int, ...], ...]
    terminals: frozenset[int]


def build_equivalent_mdp(rm: RewardMachine) -> EquivalentMdp:
    n = rm.n_states
    n_actions = max([len(ts) for ts in rm.transitions] + [1])
    P = np.zeros((n, n_actions, n))
    R = np.zeros((n, n_actions, n))
    mask = np.zeros((n, n_actions), dtype=bool)
    edges = []
    for u, ts in enumerate(rm.transitions):
        if u in rm.terminals or not ts:
            P[u, 0, u] = 1.0
            mask[u, 0] = True
            edges.append((-1,))
            continue
        for a, t in enumerate(ts):
            P[u, a, t.target] = 1.0
            R[u, a, t.target] = t.reward
            mask[u, a] = True
        edges.append(tuple(range(len(ts))))
    return EquivalentMdp(n, n_actions, P, R, mask, tuple(edges), rm.terminals)


def tabular_value_iteration(
    P: np.ndarray,
    R: np.ndarray,
    gamma: float,
    action_mask: np.ndarray | None = None,
    tol: float = DEFAULT_TOL,
    max_iters: int = DEFAULT_MAX_ITERS,
) -> np.ndarray:
    """Generic expected-value VI for P[s, a, s'] / R[s, a, s'] tables."""
    S, A, _ = P.shape
    if action_mask is None:
        action_mask = np.ones((S, A), dtype=bool)
    expected_r = np.where(action_mask, np.einsum("sat,sat->sa", P, R), -np.inf)
    flat_P = np.ascontiguousarray(P.reshape(S * A, S))
    flat_r = expected_r.ravel()
    q = np.empty(S * A)
    v = np.zeros(S)
    delta = np.inf
    for _ in range(max_iters):
        np.dot(flat_P, v, out=q)
        q *= gamma
        q += flat_r
        new = q.reshape(S, A).max(axis=1)
        delta = float(np.abs(new - v).max())
        if delta < tol:
            return new
        v = new
    raise ConvergenceError(delta, max_iters)


def _scores(rm: RewardMachine, table: RmValueTable, u: int) -> np.ndarray:
    ts = rm.transitions[u]
    return np.array([t.reward + table.gamma * table.values[t.target] for t in ts])


def greedy_transitions(
    rm: RewardMachine, table: RmValueTable, u: int, tie_epsilon: float = DEFAULT_TIE_EPS
) -> list[int]:
    """Indices of u's outgoing transitions within tie_epsilon of the best score."""
    if u in rm.terminals:
        raise ValueError(f"state {rm.states[u]} is terminal")
    if not rm.transitions[u]:
        return []
    scores = _scores(rm, table, u)
    best = scores.max()
    return [i for i, s in enumerate(scores) if s >= best - tie_epsilon]


def greedy_policy(rm: RewardMachine, table: RmValueTable, tie_epsilon: float = DEFAULT_TIE_EPS) -> RmGreedyPolicy:
    choices = {
        u: tuple(greedy_transitions(rm, table, u, tie_epsilon))
        for u in range(rm.n_states)
        if u not in rm.terminals
    }
    return RmGreedyPolicy(choices, tie_epsilon)


def desired_label(
    rm: RewardMachine,
    policy: RmGreedyPolicy,
    u: int,
    mode: str = "first",
    rng: np.random.Generator | None = None,
) -> Label:
    """Label made of the positive literals of an optimal outgoing transition.

    ``mode`` is ``"first"`` (declaration order) or ``"uniform"`` (seeded
    choice among ties).  Terminal states yield the empty label.
    """
    width = len(rm.vocabulary)
    if u in rm.terminals or not policy.choices.get(u):
        return Label.empty(width)
    options = policy.choices[u]
    if mode == "first":
        k = options[0]
    elif mode == "uniform":
        if rng is None:
            raise ValueError("uniform mode needs an rng")
        k = options[int(rng.integers(len(options)))]
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return Label(rm.transitions[u][k].guard.pos_mask, width)


def shaped_reward(
    rm: RewardMachine, table: RmValueTable, u: int, label: Label, gamma: float | None = None
) -> float:
    """R(u, label) + gamma * V(next) - V(u)."""
    g = table.gamma if gamma is None else gamma
    nxt, r = rm_step(rm, u, label)
    return r + g * table.values[nxt] - table.values[u]


def dump_values(rm: RewardMachine, table: RmValueTable) -> str:
    return "".join(f"{s}\t{float(table.values[u])!r}\n" for u, s in enumerate(rm.states))
