"""Reward machines: representation, text format, validation and stepping.

A machine is a finite automaton over labels (sets of propositional
symbols).  Transitions are conjunctions of literals; the first transition
in declaration order whose guard holds fires.  A label that matches no
transition leaves the machine where it is with reward 0.
"""
from __future__ import annotations

import itertools
import re
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "SymbolVocabulary",
    "Label",
    "Guard",
    "RmTransition",
    "RewardMachine",
    "RmRunState",
    "Diagnostic",
    "RmSyntaxError",
    "RmValidationError",
    "TerminatedMachineError",
    "LabelingFunction",
    "parse_rm",
    "serialize_rm",
    "rm_to_dot",
    "rm_step",
    "validate_rm",
]

_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_]*\Z")
_RESERVED = {"not", "and"}
_EXHAUSTIVE_OVERLAP_LIMIT = 16


class RmSyntaxError(ValueError):
    """Malformed RM document.  ``lineno`` is 1-based (0 when not line-specific)."""

    def __init__(self, message: str, lineno: int = 0):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {message}" if lineno else message)


class RmValidationError(ValueError):
    def __init__(self, diagnostics: list):
        self.diagnostics = diagnostics
        super().__init__("; ".join(d.message for d in diagnostics))


class TerminatedMachineError(RuntimeError):
    pass


@dataclass(frozen=True)
class SymbolVocabulary:
    symbols: tuple[str, ...]
    descriptions: tuple[str, ...] = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        symbols = tuple(self.symbols)
        object.__setattr__(self, "symbols", symbols)
        if len(set(symbols)) != len(symbols):
            dupes = sorted({s for s in symbols if symbols.count(s) > 1})
            raise ValueError(f"duplicate symbols: {dupes}")
        for s in symbols:
            if not _IDENT.match(s) or s in _RESERVED:
                raise ValueError(f"invalid symbol token {s!r}")
        if self.descriptions and len(self.descriptions) != len(symbols):
            raise ValueError("descriptions must align with symbols")
        object.__setattr__(self, "_index", {s: i for i, s in enumerate(symbols)})

    @property
    def index(self) -> dict[str, int]:
        return self._index

    def __len__(self) -> int:
        return len(self.symbols)

    def __iter__(self):
        return iter(self.symbols)

    def __contains__(self, token) -> bool:
        return token in self._index


@dataclass(frozen=True)
class Label:
    """Subset of the vocabulary, stored as a bit mask (bit i = symbol i)."""

    mask: int
    width: int

    def __post_init__(self):
        if self.mask < 0 or self.mask >> self.width:
            raise ValueError(f"mask {self.mask:#x} does not fit width {self.width}")

    @classmethod
    def empty(cls, width: int) -> Label:
        return cls(0, width)

    @classmethod
    def of(cls, vocab: SymbolVocabulary, names: Iterable[str] = ()) -> Label:
        mask = 0
        for name in names:
            mask |= 1 << vocab.index[name]
        return cls(mask, len(vocab))

    @classmethod
    def from_bits(cls, bits: Sequence[int]) -> Label:
        mask = 0
        for i, b in enumerate(bits):
            if b:
                mask |= 1 << i
        return cls(mask, len(bits))

    def bits(self) -> np.ndarray:
        return ((self.mask >> np.arange(self.width)) & 1).astype(float)

    def indices(self) -> list[int]:
        return [i for i in range(self.width) if self.mask >> i & 1]

    def names(self, vocab: SymbolVocabulary) -> list[str]:
        return [vocab.symbols[i] for i in self.indices()]

    def __or__(self, other: Label) -> Label:
        if other.width != self.width:
            raise ValueError("label widths differ")
        return Label(self.mask | other.mask, self.width)


@dataclass(frozen=True)
class Guard:
    """Conjunction of literals: every positive symbol set, no negative symbol set."""

    positives: frozenset[int] = frozenset()
    negatives: frozenset[int] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "positives", frozenset(self.positives))
        object.__setattr__(self, "negatives", frozenset(self.negatives))
        if self.positives & self.negatives:
            raise ValueError(
                f"guard both requires and forbids symbols {sorted(self.positives & self.negatives)}"
            )
        object.__setattr__(self, "_pos", sum(1 << i for i in self.positives))
        object.__setattr__(self, "_neg", sum(1 << i for i in self.negatives))

    @property
    def pos_mask(self) -> int:
        return self._pos

    @property
    def neg_mask(self) -> int:
        return self._neg

    def satisfied(self, label: Label) -> bool:
        m = label.mask
        return (m & self._pos) == self._pos and not (m & self._neg)

    def max_index(self) -> int:
        return max(self.positives | self.negatives, default=-1)

    def render(self, vocab: SymbolVocabulary) -> str:
        lits = [(i, "") for i in self.positives] + [(i, "not ") for i in self.negatives]
        lits.sort()
        return " and ".join(prefix + vocab.symbols[i] for i, prefix in lits)


@dataclass(frozen=True)
class RmTransition:
    source: int
    guard: Guard
    target: int
    reward: float


@dataclass(frozen=True)
class RewardMachine:
    """Abstract states are identified by their declaration index."""

    states: tuple[str, ...]
    initial: int
    terminals: frozenset[int]
    transitions: tuple[tuple[RmTransition, ...], ...]
    vocabulary: SymbolVocabulary

    def __post_init__(self):
        n = len(self.states)
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "terminals", frozenset(self.terminals))
        object.__setattr__(self, "transitions", tuple(tuple(ts) for ts in self.transitions))
        if len(set(self.states)) != n:
            raise ValueError("duplicate state names")
        if not 0 <= self.initial < n:
            raise ValueError(f"initial state {self.initial} out of range")
        if any(not 0 <= t < n for t in self.terminals):
            raise ValueError("terminal state out of range")
        if len(self.transitions) != n:
            raise ValueError("one transition list is required per state")
        width = len(self.vocabulary)
        for u, ts in enumerate(self.transitions):
            for t in ts:
                if t.source != u or not 0 <= t.target < n:
                    raise ValueError(f"transition {t} does not belong to state {u}")
                if t.guard.max_index() >= width:
                    raise ValueError(f"guard {t.guard} references a symbol outside the vocabulary")
        object.__setattr__(self, "_ids", {s: i for i, s in enumerate(self.states)})

    @property
    def n_states(self) -> int:
        return len(self.states)

    @property
    def n_transitions(self) -> int:
        return sum(len(ts) for ts in self.transitions)

    def state_id(self, name: str) -> int:
        return self._ids[name]

    def is_terminal(self, u: int) -> bool:
        return u in self.terminals

    def all_transitions(self) -> list[RmTransition]:
        return [t for ts in self.transitions for t in ts]

    def label(self, *names: str) -> Label:
        return Label.of(self.vocabulary, names)


def rm_step(rm: RewardMachine, u: int, label: Label) -> tuple[int, float]:
    """First-match step.  Unmatched labels self-loop with reward 0."""
    if u in rm.terminals:
        raise TerminatedMachineError(f"stepping a terminated machine (state {rm.states[u]})")
    if label.width != len(rm.vocabulary):
        raise ValueError(f"label width {label.width} != vocabulary size {len(rm.vocabulary)}")
    for t in rm.transitions[u]:
        if t.guard.satisfied(label):
            return t.target, t.reward
    return u, 0.0


@dataclass
class RmRunState:
    """Mutable cursor of one run through a machine."""

    current: int
    last_label: Label
    terminated: bool = False

    @classmethod
    def start(cls, rm: RewardMachine, state: int | None = None) -> RmRunState:
        u = rm.initial if state is None else state
        return cls(u, Label.empty(len(rm.vocabulary)), u in rm.terminals)

    def advance(self, rm: RewardMachine, label: Label) -> float:
        if self.terminated:
            raise TerminatedMachineError("stepping a terminated machine")
        self.current, reward = rm_step(rm, self.current, label)
        self.last_label = label
        self.terminated = self.current in rm.terminals
        return reward


# (env state, action, next env state) -> Label
LabelingFunction = Callable[[object, int, object], Label]


# --------------------------------------------------------------------------- diagnostics


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "error" | "warning"
    kind: str  # "unreachable" | "overlap" | "terminal-outgoing" | "no-outgoing"
    state: str
    message: str


def _guards_overlap_exhaustive(g1: Guard, g2: Guard, width: int) -> bool:
    labels = np.arange(1 << width, dtype=np.int64)
    ok1 = ((labels & g1.pos_mask) == g1.pos_mask) & ((labels & g1.neg_mask) == 0)
    ok2 = ((labels & g2.pos_mask) == g2.pos_mask) & ((labels & g2.neg_mask) == 0)
    return bool(np.any(ok1 & ok2))


def _guards_overlap_literal(g1: Guard, g2: Guard) -> bool:
    # two consistent conjunctions are jointly satisfiable iff neither forbids what the other requires
    return not (g1.pos_mask & g2.neg_mask or g2.pos_mask & g1.neg_mask)


def guards_overlap(g1: Guard, g2: Guard, width: int) -> bool:
    if width <= _EXHAUSTIVE_OVERLAP_LIMIT:
        return _guards_overlap_exhaustive(g1, g2, width)
    return _guards_overlap_literal(g1, g2)


def validate_rm(rm: RewardMachine) -> list[Diagnostic]:
    """Structural checks.  An empty list means the machine is clean."""
    out: list[Diagnostic] = []
    names = rm.states
    for u, ts in enumerate(rm.transitions):
        if u in rm.terminals and ts:
            out.append(Diagnostic("error", "terminal-outgoing", names[u],
                                  f"terminal state {names[u]} has {len(ts)} outgoing transition(s)"))
        if u not in rm.terminals and not ts:
            out.append(Diagnostic("error", "no-outgoing", names[u],
                                  f"non-terminal state {names[u]} has no outgoing transition"))

    seen = {rm.initial}
    queue = deque([rm.initial])
    while queue:
        u = queue.popleft()
        for t in rm.transitions[u]:
            if t.target not in seen:
                seen.add(t.target)
                queue.append(t.target)
    for u in range(rm.n_states):
        if u not in seen:
            out.append(Diagnostic("warning", "unreachable", names[u],
                                  f"state {names[u]} is unreachable from {names[rm.initial]}"))

    width = len(rm.vocabulary)
    for u, ts in enumerate(rm.transitions):
        for (i, a), (j, b) in itertools.combinations(enumerate(ts), 2):
            if guards_overlap(a.guard, b.guard, width):
                out.append(Diagnostic(
                    "warning", "overlap", names[u],
                    f"state {names[u]}: guards #{i} ({a.guard.render(rm.vocabulary)}) and "
                    f"#{j} ({b.guard.render(rm.vocabulary)}) can both hold; #{i} wins",
                ))
    return out


# --------------------------------------------------------------------------- text format

_SECTIONS = ("SYMBOLS", "STATES", "INITIAL", "TERMINAL", "TRANSITIONS")
_HEADER = re.compile(r"^(SYMBOLS|STATES|INITIAL|TERMINAL|TRANSITIONS)\s*:(.*)$", re.IGNORECASE)
_TRANSITION = re.compile(
    r"^\(\s*([^,()]+?)\s*,\s*([^()]*?)\s*\)\s*-->\s*next\s*=\s*(\S+?)\s*;\s*r\s*=\s*(\S+)\s*$"
)
_FLOAT = re.compile(r"^[+-]?(\d+(\.\d*)?|\.\d+)([eE][+-]?\d+)?$")


def _split_names(text: str, lineno: int, what: str) -> list[str]:
    names = [s.strip() for s in text.split(",")]
    names = [s for s in names if s]
    for s in names:
        if not _IDENT.match(s) or s in _RESERVED:
            raise RmSyntaxError(f"invalid {what} name {s!r}", lineno)
    return names


def parse_rm(text: str, validate: bool = True) -> RewardMachine:
    """Parse the line-oriented RM format (see :func:`serialize_rm`).

    With ``validate`` set, error-level diagnostics raise RmValidationError.
    """
    symbols: list[str] = []
    descriptions: list[str] = []
    states: list[tuple[str, int]] = []
    initial: tuple[str, int] | None = None
    terminals: list[tuple[str, int]] = []
    raw_transitions: list[tuple[int, str, str, str, str]] = []
    seen_sections: set[str] = set()
    section = None

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _HEADER.match(line)
        if m:
            section = m.group(1).upper()
            if section in seen_sections:
                raise RmSyntaxError(f"duplicate section {section}", lineno)
            seen_sections.add(section)
            rest = m.group(2).strip()
            if not rest:
                continue
            line = rest
        if section is None:
            raise RmSyntaxError(f"content before any section header: {line!r}", lineno)

        if section == "SYMBOLS":
            token, _, desc = line.partition(" - ")
            token = token.strip()
            if not _IDENT.match(token) or token in _RESERVED:
                raise RmSyntaxError(f"invalid symbol {token!r}", lineno)
            if token in symbols:
                raise RmSyntaxError(f"duplicate symbol {token!r}", lineno)
            symbols.append(token)
            descriptions.append(desc.strip())
        elif section == "STATES":
            for name in _split_names(line, lineno, "state"):
                if any(name == s for s, _ in states):
                    raise RmSyntaxError(f"duplicate state {name!r}", lineno)
                states.append((name, lineno))
        elif section == "INITIAL":
            names = _split_names(line, lineno, "state")
            if len(names) != 1 or initial is not None:
                raise RmSyntaxError("exactly one initial state is required", lineno)
            initial = (names[0], lineno)
        elif section == "TERMINAL":
            terminals.extend((n, lineno) for n in _split_names(line, lineno, "state"))
        else:
            m = _TRANSITION.match(line)
            if not m:
                raise RmSyntaxError(f"malformed transition {line!r}", lineno)
            raw_transitions.append((lineno, *m.groups()))

    if not states:
        raise RmSyntaxError("missing STATES section")
    if initial is None:
        raise RmSyntaxError("missing INITIAL section")

    vocab = SymbolVocabulary(tuple(symbols), tuple(descriptions))
    ids = {name: i for i, (name, _) in enumerate(states)}

    def state_ref(name: str, lineno: int) -> int:
        if name not in ids:
            raise RmSyntaxError(f"undeclared state {name!r}", lineno)
        return ids[name]

    init_id = state_ref(*initial)
    term_ids = frozenset(state_ref(n, ln) for n, ln in terminals)

    per_state: list[list[RmTransition]] = [[] for _ in states]
    for lineno, src, guard_text, dst, reward_text in raw_transitions:
        u = state_ref(src, lineno)
        v = state_ref(dst, lineno)
        if not _FLOAT.match(reward_text):
            raise RmSyntaxError(f"invalid reward {reward_text!r}", lineno)
        guard = _parse_guard(guard_text, vocab, lineno)
        per_state[u].append(RmTransition(u, guard, v, float(reward_text)))

    rm = RewardMachine(tuple(ids), init_id, term_ids, tuple(map(tuple, per_state)), vocab)
    if validate:
        errors = [d for d in validate_rm(rm) if d.severity == "error"]
        if errors:
            raise RmValidationError(errors)
    return rm


def _parse_guard(text: str, vocab: SymbolVocabulary, lineno: int) -> Guard:
    if not text:
        raise RmSyntaxError("empty guard", lineno)
    pos: set[int] = set()
    neg: set[int] = set()
    for lit in re.split(r"\s+and\s+", text.strip()):
        words = lit.split()
        if len(words) == 2 and words[0] == "not":
            target, sym = neg, words[1]
        elif len(words) == 1 and words[0] not in _RESERVED:
            target, sym = pos, words[0]
        else:
            raise RmSyntaxError(f"malformed literal {lit!r}", lineno)
        if sym not in vocab:
            raise RmSyntaxError(f"undeclared symbol {sym!r}", lineno)
        target.add(vocab.index[sym])
    try:
        return Guard(frozenset(pos), frozenset(neg))
    except ValueError as exc:
        raise RmSyntaxError(str(exc), lineno) from None


def _format_reward(r: float) -> str:
    return repr(float(r))


def serialize_rm(rm: RewardMachine) -> str:
    """Canonical text: fixed section order, transitions in declaration order."""
    vocab = rm.vocabulary
    lines = ["SYMBOLS:"]
    for i, s in enumerate(vocab.symbols):
        desc = vocab.descriptions[i] if vocab.descriptions else ""
        lines.append(f"  {s} - {desc}" if desc else f"  {s}")
    lines.append("STATES: " + ", ".join(rm.states))
    lines.append(f"INITIAL: {rm.states[rm.initial]}")
    lines.append("TERMINAL: " + ", ".join(rm.states[u] for u in sorted(rm.terminals)))
    lines.append("TRANSITIONS:")
    for t in rm.all_transitions():
        lines.append(
            f"  ({rm.states[t.source]}, {t.guard.render(vocab)}) --> "
            f"next={rm.states[t.target]};r={_format_reward(t.reward)}"
        )
    return "\n".join(lines) + "\n"


def rm_to_dot(rm: RewardMachine, name: str = "rm") -> str:
    """Graphviz rendering: one node per state, one edge per transition.

    The initial state is drawn bold, terminals as double circles.
    """
    out = [f"digraph {name} {{", "  rankdir=LR;"]
    for u, s in enumerate(rm.states):
        shape = "doublecircle" if u in rm.terminals else "circle"
        style = ", style=bold" if u == rm.initial else ""
        out.append(f'  "{s}" [shape={shape}{style}];')
    for t in rm.all_transitions():
        lbl = f"{t.guard.render(rm.vocabulary)} / {t.reward:g}"
        out.append(f'  "{rm.states[t.source]}" -> "{rm.states[t.target]}" [label="{lbl}"];')
    out.append("}")
    return "\n".join(out) + "\n"
