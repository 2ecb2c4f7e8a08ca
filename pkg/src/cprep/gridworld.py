"""Contextual gridworld task families.

Four environments share a grid with optional walls between adjacent cells:

* GN  reach a destination and call ``Done``
* MP  visit every destination in any order (``Arrived`` at each)
* PD  pick up passengers and drop them at their destinations
* ON  visit destinations in a prescribed order

Contexts fix entity locations (EL), walls (CM) or the visit order (PO).
Cells are ``(row, col)``; row 0 is the top (north) edge.
"""
from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "NORTH", "SOUTH", "EAST", "WEST", "DONE", "ARRIVED", "PICKUP", "DROPOFF",
    "ENV_KINDS", "CONTEXT_SPACES", "PAIRINGS",
    "GridMap", "Context", "Cmdp", "EnvState", "StepResult", "TaskMdp",
    "EpisodeFinishedError", "default_placements", "instantiate", "env_step",
    "sample_contexts", "count_contexts", "state_features", "ctl_features", "render_task",
]

NORTH, SOUTH, EAST, WEST = 0, 1, 2, 3
DONE = ARRIVED = PICKUP = 4
DROPOFF = 5
_MOVES = {NORTH: (-1, 0), SOUTH: (1, 0), EAST: (0, 1), WEST: (0, -1)}

ENV_KINDS = ("GN", "MP", "PD", "ON")
CONTEXT_SPACES = ("EL", "CM", "PO")
PAIRINGS = frozenset({
    ("GN", "EL"), ("GN", "CM"), ("MP", "EL"), ("MP", "CM"), ("PD", "EL"), ("PD", "CM"), ("ON", "PO"),
})
DEFAULT_ENTITY_COUNT = {"GN": 1, "MP": 2, "PD": 2, "ON": 5}
ACTION_NAMES = {
    "GN": ("North", "South", "East", "West", "Done"),
    "MP": ("North", "South", "East", "West", "Arrived"),
    "ON": ("North", "South", "East", "West", "Arrived"),
    "PD": ("North", "South", "East", "West", "Pickup", "Dropoff"),
}

# PD passenger status
WAITING, CARRIED, DELIVERED = 0, 1, 2

Cell = tuple[int, int]
Edge = tuple[Cell, Cell]


class EpisodeFinishedError(RuntimeError):
    pass


def _edge(a: Cell, b: Cell) -> Edge:
    return (a, b) if a <= b else (b, a)


@dataclass(frozen=True)
class GridMap:
    height: int = 6
    width: int = 6
    walls: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "walls", frozenset(_edge(*e) for e in self.walls))
        interior = set(self.interior_edges())
        bad = [e for e in self.walls if e not in interior]
        if bad:
            raise ValueError(f"walls must lie between adjacent in-bounds cells: {sorted(bad)[:3]}")

    @property
    def n_cells(self) -> int:
        return self.height * self.width

    def cells(self) -> list[Cell]:
        return [(r, c) for r in range(self.height) for c in range(self.width)]

    def cell_index(self, cell: Cell) -> int:
        return cell[0] * self.width + cell[1]

    def in_bounds(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.height and 0 <= cell[1] < self.width

    def interior_edges(self) -> list[Edge]:
        """East-west edges row-major, then north-south edges row-major."""
        ew = [((r, c), (r, c + 1)) for r in range(self.height) for c in range(self.width - 1)]
        ns = [((r, c), (r + 1, c)) for r in range(self.height - 1) for c in range(self.width)]
        return ew + ns

    def blocked(self, a: Cell, b: Cell) -> bool:
        return _edge(a, b) in self.walls

    def move(self, cell: Cell, action: int) -> Cell:
        dr, dc = _MOVES[action]
        nxt = (cell[0] + dr, cell[1] + dc)
        if not self.in_bounds(nxt) or self.blocked(cell, nxt):
            return cell
        return nxt

    def neighbours(self, cell: Cell) -> list[Cell]:
        out = []
        for a in (NORTH, SOUTH, EAST, WEST):
            nxt = self.move(cell, a)
            if nxt != cell:
                out.append(nxt)
        return out

    def is_connected(self) -> bool:
        start = (0, 0)
        seen = {start}
        queue = deque([start])
        while queue:
            for nxt in self.neighbours(queue.popleft()):
                if nxt not in seen:
                    seen.add(nxt)
                    queue.append(nxt)
        return len(seen) == self.n_cells

    def wall_bits(self) -> tuple[int, ...]:
        return tuple(int(e in self.walls) for e in self.interior_edges())

    @classmethod
    def from_wall_bits(cls, height: int, width: int, bits) -> GridMap:
        proto = cls(height, width)
        edges = proto.interior_edges()
        if len(bits) != len(edges):
            raise ValueError(f"expected {len(edges)} wall bits, got {len(bits)}")
        return cls(height, width, frozenset(e for e, b in zip(edges, bits) if b))


@dataclass(frozen=True)
class Context:
    """``payload``: EL -> cells per entity, CM -> wall bits, PO -> 1-based visit order."""

    space: str
    payload: tuple

    def __post_init__(self):
        if self.space not in CONTEXT_SPACES:
            raise ValueError(f"unknown context space {self.space!r}")
        if self.space == "EL":
            object.__setattr__(self, "payload", tuple(tuple(int(x) for x in p) for p in self.payload))
        else:
            object.__setattr__(self, "payload", tuple(int(x) for x in self.payload))

    def to_json(self) -> dict:
        return {"space": self.space, "payload": [list(p) if isinstance(p, tuple) else p for p in self.payload]}

    @classmethod
    def from_json(cls, obj: dict) -> Context:
        return cls(obj["space"], tuple(tuple(p) if isinstance(p, list) else p for p in obj["payload"]))


@dataclass(frozen=True)
class Cmdp:
    env_kind: str
    context_space: str
    base_map: GridMap = field(default_factory=GridMap)
    entity_count: int | None = None
    gamma: float = 0.99
    max_steps: int = 200
    cm_wall_range: tuple[int, int] = (1, 12)

    def __post_init__(self):
        if (self.env_kind, self.context_space) not in PAIRINGS:
            raise ValueError(f"unsupported pairing {self.env_kind}+{self.context_space}")
        if self.entity_count is None:
            object.__setattr__(self, "entity_count", DEFAULT_ENTITY_COUNT[self.env_kind])
        if self.entity_count < 1:
            raise ValueError("entity_count must be >= 1")
        if self.env_kind == "GN" and self.entity_count != 1:
            raise ValueError("GN has exactly one destination")

    @property
    def n_actions(self) -> int:
        return len(ACTION_NAMES[self.env_kind])

    @property
    def n_placed(self) -> int:
        """Number of placed entities (PD places a pickup and a destination per passenger)."""
        return 2 * self.entity_count if self.env_kind == "PD" else self.entity_count

    @property
    def status_width(self) -> int:
        return {"GN": 0, "MP": 1, "ON": 1, "PD": 2}[self.env_kind] * self.entity_count

    def default_order(self) -> tuple[int, ...]:
        return tuple(range(1, self.entity_count + 1))


@dataclass(frozen=True)
class EnvState:
    agent: Cell
    status: tuple[int, ...] = ()
    done: bool = False
    steps: int = 0

    @property
    def key(self):
        """Identity ignoring the step counter."""
        return self.agent, self.status, self.done


@dataclass(frozen=True)
class StepResult:
    next: EnvState
    reward: float
    done: bool
    truncated: bool


def default_placements(grid: GridMap, k: int) -> list[Cell]:
    """Corners (NW, SE, NE, SW), then the centre, then remaining cells row-major."""
    h, w = grid.height, grid.width
    preferred = [(0, 0), (h - 1, w - 1), (0, w - 1), (h - 1, 0), (h // 2, w // 2)]
    out: list[Cell] = []
    for cell in preferred + grid.cells():
        if cell not in out:
            out.append(cell)
        if len(out) == k:
            return out
    raise ValueError(f"cannot place {k} entities on a {h}x{w} grid")


@dataclass
class TaskMdp:
    """One context-induced task.  Owns the RNG stream used for start cells."""

    kind: str
    grid: GridMap
    entities: tuple[Cell, ...]
    order: tuple[int, ...]
    gamma: float = 0.99
    max_steps: int = 200
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0), repr=False)

    def __post_init__(self):
        n = self.n_entities
        self._start_cells = [c for c in self.grid.cells() if c not in set(self.entities)]
        if not self._start_cells:
            raise ValueError("no free start cell")
        if self.kind == "PD":
            self._pickup_at = {self.entities[2 * j]: j for j in range(n)}
            self._dest_at = {self.entities[2 * j + 1]: j for j in range(n)}
        else:
            self._entity_at = {cell: j for j, cell in enumerate(self.entities)}

    @property
    def n_entities(self) -> int:
        return len(self.entities) // 2 if self.kind == "PD" else len(self.entities)

    @property
    def n_actions(self) -> int:
        return len(ACTION_NAMES[self.kind])

    def destination(self) -> Cell:
        return self.entities[0]

    def pickup(self, j: int) -> Cell:
        return self.entities[2 * j]

    def dropoff(self, j: int) -> Cell:
        return self.entities[2 * j + 1]

    def initial_status(self) -> tuple[int, ...]:
        return () if self.kind == "GN" else (0,) * self.n_entities

    def start_cells(self) -> list[Cell]:
        return list(self._start_cells)

    def reset(self, rng: np.random.Generator | None = None) -> EnvState:
        g = self.rng if rng is None else rng
        cell = self._start_cells[int(g.integers(len(self._start_cells)))]
        return EnvState(cell, self.initial_status())

    def state_at(self, cell: Cell) -> EnvState:
        return EnvState(tuple(cell), self.initial_status())

    def step(self, s: EnvState, a: int) -> StepResult:
        if s.done or s.steps >= self.max_steps:
            raise EpisodeFinishedError("stepping a finished episode")
        if not 0 <= a < self.n_actions:
            raise ValueError(f"invalid action {a}")
        agent, status, done = s.agent, s.status, False
        if a in _MOVES:
            agent = self.grid.move(agent, a)
        elif self.kind == "GN":
            done = a == DONE and agent == self.entities[0]
        elif self.kind == "MP":
            j = self._entity_at.get(agent)
            if j is not None and not status[j]:
                status = status[:j] + (1,) + status[j + 1:]
                done = all(status)
        elif self.kind == "ON":
            j = self._entity_at.get(agent)
            k = sum(status)  # entities visited so far
            if j is not None and not status[j] and self.order[k] - 1 == j:
                status = status[:j] + (1,) + status[j + 1:]
                done = all(status)
        else:  # PD
            if a == PICKUP:
                j = self._pickup_at.get(agent)
                if j is not None and status[j] == WAITING:
                    status = status[:j] + (CARRIED,) + status[j + 1:]
            else:
                j = self._dest_at.get(agent)
                if j is not None and status[j] == CARRIED:
                    status = status[:j] + (DELIVERED,) + status[j + 1:]
                    done = all(x == DELIVERED for x in status)
        steps = s.steps + 1
        nxt = EnvState(agent, status, done, steps)
        return StepResult(nxt, 1.0 if done else 0.0, done, (not done) and steps >= self.max_steps)


def env_step(task: TaskMdp, s: EnvState, a: int) -> StepResult:
    return task.step(s, a)


def _check_context(cmdp: Cmdp, context: Context) -> None:
    if context.space != cmdp.context_space:
        raise ValueError(f"context space {context.space} does not match CMDP {cmdp.context_space}")
    grid = cmdp.base_map
    if context.space == "EL":
        cells = context.payload
        if len(cells) != cmdp.n_placed:
            raise ValueError(f"expected {cmdp.n_placed} entity cells, got {len(cells)}")
        for cell in cells:
            if not grid.in_bounds(cell):
                raise ValueError(f"entity cell {cell} is out of bounds")
        if len(set(cells)) != len(cells):
            raise ValueError("entity cells must be pairwise distinct")
    elif context.space == "CM":
        grid = GridMap.from_wall_bits(grid.height, grid.width, context.payload)
        if not grid.is_connected():
            raise ValueError("CM context yields a disconnected map")
    else:
        if sorted(context.payload) != list(range(1, cmdp.entity_count + 1)):
            raise ValueError(f"PO payload {context.payload} is not a permutation of 1..{cmdp.entity_count}")


def context_map(cmdp: Cmdp, context: Context) -> GridMap:
    if context.space == "CM":
        base = cmdp.base_map
        return GridMap.from_wall_bits(base.height, base.width, context.payload)
    return cmdp.base_map


def instantiate(cmdp: Cmdp, context: Context, seed: int | np.random.Generator | None = 0) -> TaskMdp:
    _check_context(cmdp, context)
    grid = context_map(cmdp, context)
    if context.space == "EL":
        entities = tuple(context.payload)
    else:
        entities = tuple(default_placements(grid, cmdp.n_placed))
    order = context.payload if context.space == "PO" else cmdp.default_order()
    return TaskMdp(cmdp.env_kind, grid, entities, tuple(order), cmdp.gamma, cmdp.max_steps,
                   np.random.default_rng(seed))


# --------------------------------------------------------------------------- sampling


def count_contexts(cmdp: Cmdp) -> int:
    """Distinct valid contexts (CM: an upper bound ignoring connectivity)."""
    grid = cmdp.base_map
    if cmdp.context_space == "EL":
        return math.perm(grid.n_cells, cmdp.n_placed)
    if cmdp.context_space == "PO":
        return math.factorial(cmdp.entity_count)
    n_edges = len(grid.interior_edges())
    lo, hi = cmdp.cm_wall_range
    return sum(math.comb(n_edges, k) for k in range(lo, min(hi, n_edges) + 1))


_ENUMERATE_LIMIT = 100_000


def _enumerate_contexts(cmdp: Cmdp) -> list[Context]:
    grid = cmdp.base_map
    if cmdp.context_space == "EL":
        return [Context("EL", p) for p in itertools.permutations(grid.cells(), cmdp.n_placed)]
    return [Context("PO", p) for p in itertools.permutations(range(1, cmdp.entity_count + 1))]


def _draw_context(cmdp: Cmdp, rng: np.random.Generator) -> Context | None:
    grid = cmdp.base_map
    if cmdp.context_space == "EL":
        idx = rng.choice(grid.n_cells, size=cmdp.n_placed, replace=False)
        cells = grid.cells()
        return Context("EL", tuple(cells[i] for i in idx))
    if cmdp.context_space == "PO":
        return Context("PO", tuple(int(x) + 1 for x in rng.permutation(cmdp.entity_count)))
    n_edges = len(grid.interior_edges())
    lo, hi = cmdp.cm_wall_range
    k = int(rng.integers(lo, min(hi, n_edges) + 1))
    bits = np.zeros(n_edges, dtype=int)
    bits[rng.choice(n_edges, size=k, replace=False)] = 1
    candidate = GridMap.from_wall_bits(grid.height, grid.width, bits)
    if not candidate.is_connected():
        return None
    return Context("CM", tuple(bits))


def sample_contexts(
    cmdp: Cmdp, n_src: int, n_tgt: int, rng: np.random.Generator
) -> tuple[list[Context], list[Context]]:
    """Disjoint source/target sets of distinct valid contexts."""
    total = n_src + n_tgt
    available = count_contexts(cmdp)
    if total > available:
        raise ValueError(f"requested {total} distinct contexts but only {available} exist")
    if cmdp.context_space != "CM" and available <= _ENUMERATE_LIMIT:
        pool = _enumerate_contexts(cmdp)
        picked = [pool[i] for i in rng.choice(len(pool), size=total, replace=False)]
    else:
        seen: set[Context] = set()
        picked = []
        attempts = 0
        while len(picked) < total:
            attempts += 1
            if attempts > 1000 * total + 10_000:
                raise ValueError("could not sample enough distinct valid contexts")
            ctx = _draw_context(cmdp, rng)
            if ctx is None or ctx in seen:
                continue
            seen.add(ctx)
            picked.append(ctx)
    return picked[:n_src], picked[n_src:]


# --------------------------------------------------------------------------- features


def state_features(task: TaskMdp, s: EnvState) -> np.ndarray:
    grid = task.grid
    out = np.zeros(grid.n_cells + _status_width(task))
    out[grid.cell_index(s.agent)] = 1.0
    base = grid.n_cells
    if task.kind == "PD":
        for j, st in enumerate(s.status):
            out[base + 2 * j] = st == CARRIED
            out[base + 2 * j + 1] = st == DELIVERED
    else:
        out[base:] = s.status
    return out


def _status_width(task: TaskMdp) -> int:
    return {"GN": 0, "MP": 1, "ON": 1, "PD": 2}[task.kind] * task.n_entities


def ctl_features(context: Context, base_map: GridMap) -> np.ndarray:
    if context.space == "EL":
        scale = np.array([max(base_map.height - 1, 1), max(base_map.width - 1, 1)], dtype=float)
        return (np.array(context.payload, dtype=float) / scale).ravel()
    if context.space == "CM":
        return np.array(context.payload, dtype=float)
    n = len(context.payload)
    position = np.empty(n)
    for k, entity in enumerate(context.payload):
        position[entity - 1] = k
    return position / max(n - 1, 1)


def render_task(task: TaskMdp, s: EnvState | None = None) -> str:
    """ASCII picture: '|' and '-' walls, entity letters, '@' for the agent."""
    grid = task.grid
    marks: dict[Cell, str] = {}
    if task.kind == "PD":
        for j in range(task.n_entities):
            marks[task.pickup(j)] = "P"
            marks[task.dropoff(j)] = "D"
    elif task.kind == "GN":
        marks[task.destination()] = "G"
    else:
        for j, cell in enumerate(task.entities):
            marks[cell] = str(j + 1) if j < 9 else "E"
    if s is not None:
        marks[s.agent] = "@"
    lines = ["+" + "-+" * grid.width]
    for r in range(grid.height):
        row = "|"
        for c in range(grid.width):
            row += marks.get((r, c), ".")
            row += "|" if c == grid.width - 1 or grid.blocked((r, c), (r, c + 1)) else " "
        lines.append(row)
        below = "+"
        for c in range(grid.width):
            wall = r == grid.height - 1 or grid.blocked((r, c), (r + 1, c))
            below += ("-" if wall else " ") + "+"
        lines.append(below)
    return "\n".join(lines) + "\n"
