"""Context representations and observation assembly.

An observation is ``[state features | base context encoding | LTL | DTL]``
with absent parts omitted.  The base encoding is either the controllable
context vector (CTL), a one-hot context id (PCG), or nothing.  LTL is the
last label the labeling function emitted; DTL is the desired transition
label computed by planning on the context's reward machine.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .gridworld import Cmdp, Context, EnvState, TaskMdp, ctl_features, instantiate, state_features
from .planning import (
    RmGreedyPolicy, RmValueTable, desired_label, greedy_policy, shaped_reward, value_iteration,
)
from .rm import Label, RewardMachine, RmRunState, rm_step
from .rm_generation import GeneratedRm, generate

__all__ = [
    "ReprConfig",
    "REWARD_MODES",
    "NAMED_CONFIGS",
    "parse_repr_name",
    "PcgEncoder",
    "ContextBank",
    "ContextEntry",
    "build_observation",
    "observation_width",
    "reward_for_agent",
]

REWARD_MODES = ("env", "rm_raw", "rm_shaped")
OBS_CACHE_LIMIT = 200_000


@dataclass(frozen=True)
class ReprConfig:
    base: str = "CTL"  # "CTL" | "PCG" | "none"
    use_ltl: bool = False
    use_dtl: bool = False
    reward_mode: str = "env"

    def __post_init__(self):
        if self.base not in ("CTL", "PCG", "none"):
            raise ValueError(f"unknown base representation {self.base!r}")
        if self.reward_mode not in REWARD_MODES:
            raise ValueError(f"unknown reward mode {self.reward_mode!r}")

    @property
    def needs_rm(self) -> bool:
        return self.use_ltl or self.use_dtl or self.reward_mode != "env"

    @property
    def name(self) -> str:
        parts = [] if self.base == "none" else [self.base]
        if self.use_ltl:
            parts.append("LTL")
        if self.use_dtl and self.reward_mode == "rm_shaped":
            parts.append("C-PREP")
        else:
            if self.use_dtl:
                parts.append("DTL")
            if self.reward_mode == "rm_shaped":
                parts.append("RS")
            elif self.reward_mode == "rm_raw":
                parts.append("RR")
        return "+".join(parts) if parts else "none"


def parse_repr_name(name: str) -> ReprConfig:
    """``"CTL+LTL+C-PREP"`` -> ReprConfig.  C-PREP is shorthand for DTL+RS."""
    tokens = [t.strip().upper() for t in name.split("+") if t.strip()]
    if not tokens:
        raise ValueError("empty representation name")
    base = "none"
    if tokens[0] in ("CTL", "PCG"):
        base = tokens.pop(0)
    ltl = dtl = False
    mode = "env"
    for tok in tokens:
        if tok == "LTL" and not ltl:
            ltl = True
        elif tok == "DTL" and not dtl:
            dtl = True
        elif tok == "RS" and mode == "env":
            mode = "rm_shaped"
        elif tok == "RR" and mode == "env":
            mode = "rm_raw"
        elif tok == "C-PREP" and not dtl and mode == "env":
            dtl, mode = True, "rm_shaped"
        else:
            raise ValueError(f"cannot parse representation {name!r} at token {tok!r}")
    return ReprConfig(base, ltl, dtl, mode)


NAMED_CONFIGS = {
    n: parse_repr_name(n)
    for base in ("CTL", "PCG")
    for n in (
        base, f"{base}+RS", f"{base}+LTL+RS", f"{base}+C-PREP", f"{base}+LTL",
        f"{base}+DTL", f"{base}+LTL+DTL", f"{base}+LTL+C-PREP",
    )
}
NAMED_CONFIGS.update({n: parse_repr_name(n) for n in ("C-PREP", "LTL+C-PREP", "DTL", "LTL+DTL", "RS", "LTL+RS")})


class PcgEncoder:
    """One-hot context identity over the session's source and target contexts."""

    def __init__(self, contexts, capacity: int | None = None):
        self.index_of: dict[Context, int] = {}
        for c in contexts:
            self.index_of.setdefault(c, len(self.index_of))
        self.capacity = len(self.index_of) if capacity is None else capacity
        if len(self.index_of) > self.capacity:
            raise ValueError(f"{len(self.index_of)} contexts exceed PCG capacity {self.capacity}")

    def encode(self, context: Context) -> np.ndarray:
        if context not in self.index_of:
            raise KeyError("context is not registered with the PCG encoder")
        out = np.zeros(self.capacity)
        out[self.index_of[context]] = 1.0
        return out


def build_observation(
    cfg: ReprConfig,
    task: TaskMdp,
    s: EnvState,
    context: Context,
    run: RmRunState | None = None,
    rm: RewardMachine | None = None,
    policy: RmGreedyPolicy | None = None,
    pcg: PcgEncoder | None = None,
    base_map=None,
    width: int | None = None,
) -> np.ndarray:
    parts = [state_features(task, s)]
    if cfg.base == "CTL":
        parts.append(ctl_features(context, task.grid if base_map is None else base_map))
    elif cfg.base == "PCG":
        if pcg is None:
            raise ValueError("PCG representation needs an encoder")
        parts.append(pcg.encode(context))
    if cfg.use_ltl:
        parts.append(run.last_label.bits())
    if cfg.use_dtl:
        if rm is None or policy is None:
            raise ValueError("DTL needs the context's machine and greedy policy")
        parts.append(desired_label(rm, policy, run.current).bits())
    obs = np.concatenate(parts)
    if width is not None and obs.shape[0] != width:
        raise ValueError(f"observation width {obs.shape[0]} != session width {width}")
    return obs


def observation_width(cfg: ReprConfig, cmdp: Cmdp, vocab_size: int, pcg_capacity: int = 0) -> int:
    grid = cmdp.base_map
    w = grid.n_cells + cmdp.status_width
    if cfg.base == "CTL":
        if cmdp.context_space == "EL":
            w += 2 * cmdp.n_placed
        elif cmdp.context_space == "CM":
            w += len(grid.interior_edges())
        else:
            w += cmdp.entity_count
    elif cfg.base == "PCG":
        w += pcg_capacity
    if cfg.use_ltl:
        w += vocab_size
    if cfg.use_dtl:
        w += vocab_size
    return w


def reward_for_agent(
    cfg: ReprConfig,
    env_r: float,
    rm: RewardMachine | None = None,
    table: RmValueTable | None = None,
    u: int | None = None,
    label: Label | None = None,
) -> float:
    if cfg.reward_mode == "env":
        return env_r
    if rm is None:
        raise ValueError(f"reward mode {cfg.reward_mode} needs a reward machine")
    if cfg.reward_mode == "rm_raw":
        return rm_step(rm, u, label)[1]
    if table is None:
        raise ValueError("shaped rewards need a value table")
    return shaped_reward(rm, table, u, label)


@dataclass
class ContextEntry:
    """Everything precomputed for one context of a session."""

    context: Context
    task: TaskMdp
    grm: GeneratedRm | None
    table: RmValueTable | None
    policy: RmGreedyPolicy | None
    base_vec: np.ndarray
    dtl_cache: dict
    obs_cache: dict = field(default_factory=dict, repr=False)


class ContextBank:
    """Per-session cache: task, machine, values and encodings for each context.

    Observation width is fixed at construction; every observation is checked
    against it.
    """

    def __init__(self, cmdp: Cmdp, cfg: ReprConfig, contexts, sector_size=(2, 2),
                 pcg: PcgEncoder | None = None, dtl_mode: str = "first"):
        self.cmdp = cmdp
        self.cfg = cfg
        self.sector_size = tuple(sector_size)
        self.dtl_mode = dtl_mode
        contexts = list(dict.fromkeys(contexts))
        if cfg.base == "PCG" and pcg is None:
            pcg = PcgEncoder(contexts)
        self.pcg = pcg
        self._entries: dict[Context, ContextEntry] = {}
        for c in contexts:
            self.entry(c)
        vocab = self._vocab_size(contexts)
        self.width = observation_width(cfg, cmdp, vocab, pcg.capacity if pcg else 0)

    def _vocab_size(self, contexts) -> int:
        if not self.cfg.needs_rm or not contexts:
            return 0
        return len(self.entry(contexts[0]).grm.rm.vocabulary)

    def entry(self, context: Context) -> ContextEntry:
        e = self._entries.get(context)
        if e is not None:
            return e
        task = instantiate(self.cmdp, context)
        grm = table = policy = None
        if self.cfg.needs_rm:
            grm = generate(self.cmdp, context, self.sector_size, task=task)
            table = value_iteration(grm.rm, self.cmdp.gamma)
            policy = greedy_policy(grm.rm, table)
        if self.cfg.base == "CTL":
            base_vec = ctl_features(context, self.cmdp.base_map)
        elif self.cfg.base == "PCG":
            base_vec = self.pcg.encode(context)
        else:
            base_vec = np.zeros(0)
        e = ContextEntry(context, task, grm, table, policy, base_vec, {})
        self._entries[context] = e
        return e

    def dtl_bits(self, e: ContextEntry, u: int, rng: np.random.Generator | None = None) -> np.ndarray:
        """DTL segment for abstract state u (cached unless sampling among ties)."""
        if self.dtl_mode != "first":
            return desired_label(e.grm.rm, e.policy, u, self.dtl_mode, rng).bits()
        bits = e.dtl_cache.get(u)
        if bits is None:
            bits = desired_label(e.grm.rm, e.policy, u).bits()
            e.dtl_cache[u] = bits
        return bits

    def observe(self, e: ContextEntry, s: EnvState, run: RmRunState | None,
                dtl: np.ndarray | None = None) -> np.ndarray:
        """Augmented observation (read-only; shared between identical inputs)."""
        if self.cfg.use_dtl and dtl is None:
            dtl = self.dtl_bits(e, run.current)
        key = (s.key,
               run.last_label.mask if self.cfg.use_ltl else None,
               dtl.tobytes() if dtl is not None else None)
        obs = e.obs_cache.get(key)
        if obs is not None:
            return obs
        parts = [state_features(e.task, s), e.base_vec]
        if self.cfg.use_ltl:
            parts.append(run.last_label.bits())
        if self.cfg.use_dtl:
            parts.append(dtl)
        obs = np.concatenate(parts)
        if obs.shape[0] != self.width:
            raise ValueError(f"observation width {obs.shape[0]} != session width {self.width}")
        obs.setflags(write=False)
        if len(e.obs_cache) < OBS_CACHE_LIMIT:
            e.obs_cache[key] = obs
        return obs
