import os
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

sys.path.insert(0, str(Path(__file__).parent))

from cprep.rm import Guard, RewardMachine, RmTransition, SymbolVocabulary, parse_rm  # noqa: E402

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ORDER2 = """\
SYMBOLS:
  P1 - point 1 visited
  P2 - point 2 visited
STATES: u0, u1, u2
INITIAL: u0
TERMINAL: u2
TRANSITIONS:
  (u0, not P1) --> next=u0;r=0
  (u0, P1) --> next=u1;r=0
  (u1, not P2) --> next=u1;r=0
  (u1, P2) --> next=u2;r=1
"""


@pytest.fixture
def order2():
    return parse_rm(ORDER2)


def random_machine(rng, max_states=8, max_symbols=4, max_edges=3, rewards=(0.0, 1.0)):
    """Random valid machine: every non-terminal state has at least one edge."""
    n = int(rng.integers(1, max_states + 1))
    k = int(rng.integers(1, max_symbols + 1))
    vocab = SymbolVocabulary(tuple(f"p{i}" for i in range(k)))
    n_term = int(rng.integers(0, n)) if n > 1 else 1
    terminals = frozenset(int(x) for x in rng.choice(n, size=n_term, replace=False))
    trans = []
    for u in range(n):
        if u in terminals:
            trans.append(())
            continue
        ts = []
        for _ in range(int(rng.integers(1, max_edges + 1))):
            lits = rng.integers(-1, 2, size=k)  # -1 negative, 0 absent, 1 positive
            if not lits.any():
                lits[int(rng.integers(k))] = 1
            g = Guard(frozenset(np.flatnonzero(lits == 1).tolist()), frozenset(np.flatnonzero(lits == -1).tolist()))
            ts.append(RmTransition(u, g, int(rng.integers(n)), float(rng.choice(rewards))))
        trans.append(tuple(ts))
    initial = int(rng.integers(n))
    return RewardMachine(tuple(f"q{i}" for i in range(n)), initial, terminals, tuple(trans), vocab)


@st.composite
def machines(draw, **kw):
    seed = draw(st.integers(0, 2**32 - 1))
    return random_machine(np.random.default_rng(seed), **kw)


def slow_enabled():
    return os.environ.get("CPREP_SLOW", "") not in ("", "0")
