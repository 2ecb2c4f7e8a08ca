"""Transfer sessions: source training, transfer to target, from-scratch baseline."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .agent import DqnConfig, Episode, QNetwork, run_training
from .gridworld import Cmdp, Context, sample_contexts
from .metrics import (
    THRESHOLD_GRID, TrainingHistory, iqm, js, stratified_bootstrap_ci, tr, ttt_auc, ttt_curve,
)
from .representation import ContextBank, ReprConfig

__all__ = [
    "DEFAULT_SEEDS",
    "evaluate_policy",
    "SessionResult",
    "run_session",
    "SeedUtilities",
    "seed_utilities",
    "Aggregate",
    "aggregate",
]

DEFAULT_SEEDS = (42, 84, 126, 168, 210)


def evaluate_policy(
    net: QNetwork,
    bank: ContextBank,
    contexts: Sequence[Context],
    n_episodes: int = 50,
    gamma: float = 0.99,
    rng: np.random.Generator | int | None = 0,
) -> float:
    """Mean discounted env return of the greedy policy over sampled contexts.

    Episodes run in lockstep so each step is one batched forward pass.
    """
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    episodes = []
    for _ in range(n_episodes):
        entry = bank.entry(contexts[int(rng.integers(len(contexts)))])
        episodes.append(Episode(bank, entry, entry.task.reset(rng), rng))
    returns = np.zeros(n_episodes)
    discount = np.ones(n_episodes)
    active = list(range(n_episodes))
    while active:
        obs = np.stack([episodes[i].observation() for i in active])
        actions = np.argmax(net.forward(obs), axis=1)
        still = []
        for i, a in zip(active, actions):
            _, env_r, _, _ = episodes[i].step(int(a))
            returns[i] += discount[i] * env_r
            discount[i] *= gamma
            if not episodes[i].finished:
                still.append(i)
        active = still
    return float(np.mean(returns))


class _Recorder:
    def __init__(self, bank, contexts, n_episodes, gamma, seed_seq):
        self.bank = bank
        self.contexts = contexts
        self.n_episodes = n_episodes
        self.gamma = gamma
        self.seed_seq = seed_seq
        self.progress: list[int] = []
        self.steps: list[int] = []
        self.returns: list[float] = []

    def __call__(self, progress: int, env_steps: int, net: QNetwork) -> None:
        rng = np.random.default_rng(self.seed_seq.spawn(1)[0])
        self.progress.append(progress)
        self.steps.append(env_steps)
        self.returns.append(evaluate_policy(net, self.bank, self.contexts, self.n_episodes, self.gamma, rng))

    def history(self) -> TrainingHistory:
        return TrainingHistory(self.progress, self.returns, self.steps)


@dataclass
class SessionResult:
    seed: int
    src: list
    tgt: list
    source: TrainingHistory  # source policy on src
    transferred: TrainingHistory  # transferred policy on tgt
    target: TrainingHistory  # from-scratch policy on tgt
    source_on_target: TrainingHistory | None = None
    nets: dict = field(default_factory=dict)
    env_steps: dict = field(default_factory=dict)


def run_session(
    cmdp: Cmdp,
    cfg: ReprConfig,
    dqn: DqnConfig,
    n_src: int,
    n_tgt: int,
    steps_src: int,
    steps_tgt: int,
    seed: int,
    eval_episodes: int = 50,
    sector_size=(2, 2),
    n_evals: int = 100,
    track_generalization: bool = True,
    contexts: tuple[list, list] | None = None,
) -> SessionResult:
    if steps_src <= 0 or steps_tgt <= 0:
        raise ValueError("training budgets must be positive")
    ss = np.random.SeedSequence(seed)
    ctx_ss, src_ss, tsf_ss, tgt_ss, eval_ss = ss.spawn(5)
    if contexts is None:
        src, tgt = sample_contexts(cmdp, n_src, n_tgt, np.random.default_rng(ctx_ss))
    else:
        src, tgt = list(contexts[0]), list(contexts[1])
    if set(src) & set(tgt):
        raise ValueError("source and target context sets overlap")
    bank = ContextBank(cmdp, cfg, src + tgt, sector_size)
    e_src, e_sot, e_tsf, e_tgt = eval_ss.spawn(4)

    rec_src = _Recorder(bank, src, eval_episodes, cmdp.gamma, e_src)
    rec_sot = _Recorder(bank, tgt, eval_episodes, cmdp.gamma, e_sot) if track_generalization else None

    def on_source_eval(progress, steps, net):
        rec_src(progress, steps, net)
        if rec_sot is not None:
            rec_sot(progress, steps, net)

    source = run_training(bank, src, dqn, steps_src, np.random.default_rng(src_ss),
                          on_eval=on_source_eval, n_evals=n_evals)

    rec_tsf = _Recorder(bank, tgt, eval_episodes, cmdp.gamma, e_tsf)
    transferred = run_training(bank, tgt, dqn, steps_tgt, np.random.default_rng(tsf_ss),
                               net=source.net.copy(), on_eval=rec_tsf, n_evals=n_evals)

    rec_tgt = _Recorder(bank, tgt, eval_episodes, cmdp.gamma, e_tgt)
    target = run_training(bank, tgt, dqn, steps_tgt, np.random.default_rng(tgt_ss),
                          on_eval=rec_tgt, n_evals=n_evals)

    return SessionResult(
        seed, src, tgt,
        rec_src.history(), rec_tsf.history(), rec_tgt.history(),
        rec_sot.history() if rec_sot is not None else None,
        nets={"source": source.net, "transferred": transferred.net, "target": target.net},
        env_steps={"source": source.env_steps, "transferred": transferred.env_steps,
                   "target": target.env_steps},
    )


@dataclass(frozen=True)
class SeedUtilities:
    ttt_curve: np.ndarray
    ttt_auc: float
    js: float
    tr: float


def seed_utilities(transferred: TrainingHistory, target: TrainingHistory,
                   grid: np.ndarray = THRESHOLD_GRID) -> SeedUtilities:
    return SeedUtilities(ttt_curve(transferred, grid), ttt_auc(transferred, grid),
                         js(transferred), tr(transferred, target))


@dataclass(frozen=True)
class Aggregate:
    values: tuple
    iqm: float
    std: float
    ci_low: float
    ci_high: float
    infinite: bool = False

    def to_json(self) -> dict:
        def num(x):
            return x if math.isfinite(x) else ("inf" if x > 0 else ("-inf" if x < 0 else "nan"))
        return {"values": [num(v) for v in self.values], "iqm": num(self.iqm), "std": num(self.std),
                "ci_low": num(self.ci_low), "ci_high": num(self.ci_high), "infinite": self.infinite}


def aggregate(strata, n_resamples: int = 2000, rng: np.random.Generator | int | None = 0) -> Aggregate:
    """IQM, std and stratified bootstrap CI of per-seed values grouped by stratum."""
    groups = [np.asarray(g, dtype=float).ravel() for g in strata]
    flat = np.concatenate(groups)
    if np.any(np.isinf(flat)):
        return Aggregate(tuple(flat.tolist()), math.inf, math.nan, math.nan, math.nan, True)
    lo, hi = stratified_bootstrap_ci(groups, n_resamples, 0.95, rng)
    return Aggregate(tuple(flat.tolist()), iqm(flat), float(np.std(flat)), lo, hi)
