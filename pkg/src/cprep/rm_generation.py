"""Reward-machine generators for the gridworld task families.

Every family uses one vocabulary for all of its contexts, so symbols (and
hence the desired-transition encoding) mean the same thing across tasks.

ON/PO tasks get the full-resolution order machine.  The other families get
a partial-resolution *sector* machine: the grid is tiled into sectors, a
symbol ``S<i>`` marks the agent being in sector i, and event symbols mark
task progress (``G`` for GN, ``A<j>`` for MP, ``P<j>``/``D<j>`` for PD).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

from .gridworld import (
    CARRIED, DELIVERED, DONE, WAITING, Cmdp, Context, EnvState, GridMap, TaskMdp,
    context_map, instantiate,
)
from .rm import Guard, Label, RewardMachine, RmTransition, SymbolVocabulary

__all__ = [
    "SectorDecomposition",
    "GeneratedRm",
    "gen_order_rm",
    "gen_sector_rm",
    "generate",
    "family_vocabulary",
]


@dataclass(frozen=True)
class SectorDecomposition:
    sector_size: tuple[int, int]
    grid: GridMap
    sector_of: dict = field(compare=False, repr=False)
    adjacency: frozenset = field(compare=False, repr=False)

    @classmethod
    def build(cls, grid: GridMap, sector_size: tuple[int, int] = (2, 2)) -> SectorDecomposition:
        sh, sw = sector_size
        if sh < 1 or sw < 1 or grid.height % sh or grid.width % sw:
            raise ValueError(f"{sh}x{sw} sectors do not tile a {grid.height}x{grid.width} grid")
        per_row = grid.width // sw
        sector_of = {(r, c): (r // sh) * per_row + c // sw for r, c in grid.cells()}
        adj = set()
        for cell in grid.cells():
            for nxt in grid.neighbours(cell):
                a, b = sector_of[cell], sector_of[nxt]
                if a != b:
                    adj.add((a, b))
                    adj.add((b, a))
        return cls(tuple(sector_size), grid, sector_of, frozenset(adj))

    @property
    def n_sectors(self) -> int:
        return (self.grid.height // self.sector_size[0]) * (self.grid.width // self.sector_size[1])

    def neighbours(self, i: int) -> list[int]:
        return sorted(j for a, j in self.adjacency if a == i)


@dataclass(frozen=True)
class GeneratedRm:
    rm: RewardMachine
    labeler: Callable[[EnvState, int, EnvState], Label] = field(compare=False, repr=False)
    resolution: str
    # abstract state a run starts in, given the episode's first env state
    start: Callable[[EnvState], int] = field(compare=False, repr=False)


def family_vocabulary(env_kind: str, n_entities: int, n_sectors: int = 0) -> SymbolVocabulary:
    sectors = [f"S{i + 1}" for i in range(n_sectors)]
    if env_kind == "ON":
        return SymbolVocabulary(
            tuple(f"P{j}" for j in range(1, n_entities + 1)),
            tuple(f"point {j} has been visited" for j in range(1, n_entities + 1)),
        )
    if env_kind == "GN":
        events = ["G"]
    elif env_kind == "MP":
        events = [f"A{j}" for j in range(1, n_entities + 1)]
    elif env_kind == "PD":
        events = [f"P{j}" for j in range(1, n_entities + 1)] + [f"D{j}" for j in range(1, n_entities + 1)]
    else:
        raise ValueError(f"unknown environment {env_kind!r}")
    return SymbolVocabulary(tuple(sectors + events))


def gen_order_rm(order, n: int) -> GeneratedRm:
    """Chain machine u0 -> ... -> un visiting entities in ``order`` (1-based)."""
    order = tuple(int(x) for x in order)
    if sorted(order) != list(range(1, n + 1)):
        raise ValueError(f"{order} is not a permutation of 1..{n}")
    vocab = family_vocabulary("ON", n)
    states = tuple(f"u{k}" for k in range(n + 1))
    transitions = []
    for k in range(1, n + 1):
        sym = order[k - 1] - 1
        transitions.append((
            RmTransition(k - 1, Guard(negatives=frozenset({sym})), k - 1, 0.0),
            RmTransition(k - 1, Guard(positives=frozenset({sym})), k, 1.0 if k == n else 0.0),
        ))
    transitions.append(())
    rm = RewardMachine(states, 0, frozenset({n}), tuple(transitions), vocab)

    def labeler(s: EnvState, a: int, s2: EnvState) -> Label:
        mask = 0
        for j, (before, after) in enumerate(zip(s.status, s2.status)):
            if after and not before:
                mask |= 1 << j
        return Label(mask, n)

    return GeneratedRm(rm, labeler, "full", lambda s: 0)


def _status_space(env_kind: str, n: int) -> list[tuple[int, ...]]:
    if env_kind == "GN":
        return [()]
    if env_kind == "MP":
        return list(itertools.product((0, 1), repeat=n))
    return list(itertools.product((WAITING, CARRIED, DELIVERED), repeat=n))


def _complete(env_kind: str, st: tuple[int, ...]) -> bool:
    if env_kind == "MP":
        return all(st)
    if env_kind == "PD":
        return all(x == DELIVERED for x in st)
    return False


def _status_tag(st: tuple[int, ...]) -> str:
    return "".join(str(x) for x in st)


def gen_sector_rm(
    env_kind: str,
    grid: GridMap,
    entities: tuple,
    decomp: SectorDecomposition,
) -> GeneratedRm:
    """Partial-resolution machine over (agent sector) x (task status)."""
    if env_kind not in ("GN", "MP", "PD"):
        raise ValueError(f"sector machines are defined for GN/MP/PD, not {env_kind}")
    if decomp.grid != grid:
        raise ValueError("decomposition was built for a different map")
    for cell in entities:
        if not grid.in_bounds(cell):
            raise ValueError(f"entity cell {cell} is outside the map")
    n = len(entities) // 2 if env_kind == "PD" else len(entities)
    k = decomp.n_sectors
    vocab = family_vocabulary(env_kind, n, k)
    sym = vocab.index
    ent_sector = [decomp.sector_of[c] for c in entities]

    statuses = [st for st in _status_space(env_kind, n) if not _complete(env_kind, st)]
    names = []
    ids = {}
    for i in range(k):
        for st in statuses:
            ids[(i, st)] = len(names)
            names.append(f"s{i + 1}_{_status_tag(st)}" if st else f"s{i + 1}")
    goal = len(names)
    names.append("goal")

    def dest(i: int, st: tuple[int, ...]) -> int:
        return goal if _complete(env_kind, st) else ids[(i, st)]

    transitions = []
    for i in range(k):
        for st in statuses:
            u = ids[(i, st)]
            ts = []
            if env_kind == "GN":
                if ent_sector[0] == i:
                    ts.append(RmTransition(u, Guard(frozenset({sym["G"]})), goal, 1.0))
            elif env_kind == "MP":
                for j in range(n):
                    if not st[j] and ent_sector[j] == i:
                        st2 = st[:j] + (1,) + st[j + 1:]
                        v = dest(i, st2)
                        ts.append(RmTransition(u, Guard(frozenset({sym[f"A{j + 1}"]})), v, float(v == goal)))
            else:
                for j in range(n):
                    if st[j] == WAITING and ent_sector[2 * j] == i:
                        st2 = st[:j] + (CARRIED,) + st[j + 1:]
                        ts.append(RmTransition(u, Guard(frozenset({sym[f"P{j + 1}"]})), dest(i, st2), 0.0))
                    if st[j] == CARRIED and ent_sector[2 * j + 1] == i:
                        st2 = st[:j] + (DELIVERED,) + st[j + 1:]
                        v = dest(i, st2)
                        ts.append(RmTransition(u, Guard(frozenset({sym[f"D{j + 1}"]})), v, float(v == goal)))
            for j in decomp.neighbours(i):
                ts.append(RmTransition(u, Guard(frozenset({sym[f"S{j + 1}"]})), ids[(j, st)], 0.0))
            transitions.append(tuple(ts))
    transitions.append(())
    rm = RewardMachine(tuple(names), 0, frozenset({goal}), tuple(transitions), vocab)

    width = len(vocab)
    sector_of = decomp.sector_of
    goal_cell = entities[0] if env_kind == "GN" else None

    def labeler(s: EnvState, a: int, s2: EnvState) -> Label:
        mask = 1 << sector_of[s2.agent]
        if env_kind == "GN":
            if a == DONE and s.agent == goal_cell:
                mask |= 1 << sym["G"]
        elif env_kind == "MP":
            for j, (b, c) in enumerate(zip(s.status, s2.status)):
                if c and not b:
                    mask |= 1 << sym[f"A{j + 1}"]
        else:
            for j, (b, c) in enumerate(zip(s.status, s2.status)):
                if b == WAITING and c == CARRIED:
                    mask |= 1 << sym[f"P{j + 1}"]
                elif b == CARRIED and c == DELIVERED:
                    mask |= 1 << sym[f"D{j + 1}"]
        return Label(mask, width)

    def start(s: EnvState) -> int:
        if _complete(env_kind, s.status) or s.done:
            return goal
        return ids[(sector_of[s.agent], s.status)]

    return GeneratedRm(rm, labeler, "partial", start)


def generate(cmdp: Cmdp, context: Context, sector_size: tuple[int, int] = (2, 2),
             task: TaskMdp | None = None) -> GeneratedRm:
    """Family-appropriate machine for one context."""
    if cmdp.env_kind == "ON":
        if context.space != "PO":
            raise ValueError("ON machines need a PO context")
        return gen_order_rm(context.payload, cmdp.entity_count)
    if context.space not in ("EL", "CM"):
        raise ValueError(f"unsupported pairing {cmdp.env_kind}+{context.space}")
    if task is None:
        task = instantiate(cmdp, context)
    grid = context_map(cmdp, context)
    decomp = SectorDecomposition.build(grid, sector_size)
    return gen_sector_rm(cmdp.env_kind, grid, task.entities, decomp)
