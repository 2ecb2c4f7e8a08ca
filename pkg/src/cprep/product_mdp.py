"""Exact dynamic programming on (env state x machine state).

Used as a verification oracle: the greedy action sets of the product MDP
must not change when env rewards are replaced by potential-shaped machine
rewards.  The step cap is ignored (infinite-horizon discounted problem).
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .gridworld import EnvState, TaskMdp
from .planning import RmValueTable, value_iteration
from .rm import rm_step
from .rm_generation import GeneratedRm

__all__ = ["ProductSolution", "solve_product_mdp", "MAX_PRODUCT_STATES"]

MAX_PRODUCT_STATES = 1_000_000


@dataclass(frozen=True)
class ProductSolution:
    states: list  # (env key, rm state)
    index: dict
    values: np.ndarray
    q: np.ndarray  # (N, A); terminal rows are zero
    terminal: np.ndarray
    greedy: list  # per state: tuple of optimal actions (empty for terminals)

    def value(self, s: EnvState, u: int) -> float:
        return float(self.values[self.index[(s.key, u)]])


def _status_count(task: TaskMdp) -> int:
    if task.kind == "GN":
        return 2
    base = 3 if task.kind == "PD" else 2
    return base ** task.n_entities


def solve_product_mdp(
    task: TaskMdp,
    grm: GeneratedRm,
    gamma: float = 0.99,
    reward_mode: str = "env",
    table: RmValueTable | None = None,
    tie_epsilon: float = 1e-9,
    tol: float = 1e-14,
    max_iters: int = 100_000,
) -> ProductSolution:
    """Exact values and greedy sets over states reachable from any start cell."""
    rm = grm.rm
    bound = task.grid.n_cells * _status_count(task) * rm.n_states
    if bound > MAX_PRODUCT_STATES:
        raise ValueError(f"product space bound {bound} exceeds {MAX_PRODUCT_STATES}")
    if reward_mode not in ("env", "rm_raw", "rm_shaped"):
        raise ValueError(f"unknown reward mode {reward_mode!r}")
    if reward_mode == "rm_shaped" and table is None:
        table = value_iteration(rm, gamma)

    states: list = []
    index: dict = {}
    terminal: list[bool] = []

    def add(s: EnvState, u: int, term: bool) -> int:
        key = (s.key, u)
        i = index.get(key)
        if i is None:
            i = len(states)
            index[key] = i
            states.append(key)
            terminal.append(term)
        return i

    queue = deque()
    for cell in task.start_cells():
        s0 = task.state_at(cell)
        u0 = grm.start(s0)
        before = len(states)
        i = add(s0, u0, u0 in rm.terminals)
        if len(states) > before:
            queue.append((i, s0, u0))

    A = task.n_actions
    edges: dict[int, list] = {}
    while queue:
        i, s, u = queue.popleft()
        if terminal[i]:
            continue
        row = []
        for a in range(A):
            res = task.step(EnvState(s.agent, s.status, s.done, 0), a)
            nxt = EnvState(res.next.agent, res.next.status, res.next.done, 0)
            label = grm.labeler(s, a, res.next)
            v, rm_r = rm_step(rm, u, label)
            if reward_mode == "env":
                r = res.reward
            elif reward_mode == "rm_raw":
                r = rm_r
            else:
                r = rm_r + gamma * table.values[v] - table.values[u]
            term = res.done or v in rm.terminals
            before = len(states)
            j = add(nxt, v, term)
            if len(states) > before:
                queue.append((j, nxt, v))
            row.append((j, r))
        edges[i] = row

    n = len(states)
    nxt_idx = np.zeros((n, A), dtype=np.intp)
    rew = np.zeros((n, A))
    term = np.array(terminal, dtype=bool)
    for i, row in edges.items():
        for a, (j, r) in enumerate(row):
            nxt_idx[i, a] = j
            rew[i, a] = r
    for i in np.flatnonzero(term):
        nxt_idx[i, :] = i

    v = np.zeros(n)
    for _ in range(max_iters):
        q = rew + gamma * v[nxt_idx]
        q[term] = 0.0
        new = q.max(axis=1)
        delta = np.max(np.abs(new - v)) if n else 0.0
        v = new
        if delta < tol:
            break
    q = rew + gamma * v[nxt_idx]
    q[term] = 0.0
    best = q.max(axis=1)
    greedy = [
        () if term[i] else tuple(np.flatnonzero(q[i] >= best[i] - tie_epsilon).tolist())
        for i in range(n)
    ]
    return ProductSolution(states, index, v, q, term, greedy)
