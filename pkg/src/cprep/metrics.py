"""Transfer utilities computed from training histories.

A history holds the evaluated mean discounted return at 101 progress points
(before training, then after every 1% of the budget).
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "TrainingHistory",
    "THRESHOLD_GRID",
    "threshold_grid",
    "ttt",
    "ttt_curve",
    "ttt_auc",
    "auc",
    "js",
    "tr",
    "iqm",
    "stratified_bootstrap_ci",
]

TTT_CAP = 100.0


def threshold_grid(n: int = 51) -> np.ndarray:
    return np.linspace(0.0, 1.0, n)


THRESHOLD_GRID = threshold_grid()


@dataclass(frozen=True)
class TrainingHistory:
    progress: np.ndarray  # percent of training, strictly increasing
    returns: np.ndarray  # mean discounted env return
    env_steps: np.ndarray | None = None

    def __post_init__(self):
        p = np.asarray(self.progress, dtype=float)
        r = np.asarray(self.returns, dtype=float)
        if p.shape != r.shape or p.ndim != 1 or len(p) == 0:
            raise ValueError("progress and returns must be equal-length 1-d arrays")
        if np.any(np.diff(p) <= 0):
            raise ValueError("progress must be strictly increasing")
        object.__setattr__(self, "progress", p)
        object.__setattr__(self, "returns", r)
        if self.env_steps is not None:
            object.__setattr__(self, "env_steps", np.asarray(self.env_steps, dtype=np.int64))

    @classmethod
    def from_returns(cls, returns, env_steps=None) -> TrainingHistory:
        returns = np.asarray(returns, dtype=float)
        return cls(np.arange(len(returns), dtype=float) * (100.0 / (len(returns) - 1)), returns, env_steps)

    def __len__(self) -> int:
        return len(self.progress)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["progress_percent", "env_steps", "mean_return"])
        steps = self.env_steps if self.env_steps is not None else [""] * len(self)
        for p, s, r in zip(self.progress, steps, self.returns):
            w.writerow([f"{p:g}", s, repr(float(r))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> TrainingHistory:
        rows = list(csv.DictReader(io.StringIO(text)))
        steps = [r["env_steps"] for r in rows]
        return cls(
            [float(r["progress_percent"]) for r in rows],
            [float(r["mean_return"]) for r in rows],
            [int(s) for s in steps] if all(steps) else None,
        )


def ttt(h: TrainingHistory, theta: float) -> float:
    """First progress at which the return reaches theta; the cap if never."""
    hits = np.flatnonzero(h.returns >= theta)
    return float(h.progress[hits[0]]) if len(hits) else TTT_CAP


def ttt_curve(h: TrainingHistory, grid: np.ndarray = THRESHOLD_GRID) -> np.ndarray:
    return np.array([ttt(h, th) for th in grid])


def ttt_auc(h: TrainingHistory, grid: np.ndarray = THRESHOLD_GRID) -> float:
    return float(np.mean(ttt_curve(h, grid)))


def auc(h: TrainingHistory) -> float:
    return float(np.mean(h.returns))


def js(h_tsf: TrainingHistory) -> float:
    return float(h_tsf.returns[0])


def tr(h_tsf: TrainingHistory, h_tgt: TrainingHistory) -> float:
    """Relative AUC gain of transfer; ``inf`` when the baseline AUC is 0."""
    base = auc(h_tgt)
    if base == 0.0:
        return math.inf
    return (auc(h_tsf) - base) / base


def iqm(values) -> float:
    """Mean after dropping floor(n/4) values from each end."""
    x = np.sort(np.asarray(values, dtype=float).ravel())
    if x.size == 0:
        raise ValueError("iqm of an empty sample")
    k = x.size // 4
    return float(np.mean(x[k:x.size - k]))


def _iqm_rows(x: np.ndarray) -> np.ndarray:
    x = np.sort(x, axis=1)
    k = x.shape[1] // 4
    return x[:, k:x.shape[1] - k].mean(axis=1)


def stratified_bootstrap_ci(
    strata,
    n_resamples: int = 2000,
    level: float = 0.95,
    rng: np.random.Generator | int | None = 0,
    statistic=iqm,
) -> tuple[float, float]:
    """Percentile CI of ``statistic`` over resamples drawn within each stratum.

    ``strata`` is a sequence of 1-d samples (e.g. per-seed scores of one task).
    """
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    groups = [np.asarray(s, dtype=float).ravel() for s in strata]
    groups = [g for g in groups if g.size]
    if not groups:
        raise ValueError("no data to bootstrap")
    sample = np.concatenate(
        [g[rng.integers(g.size, size=(n_resamples, g.size))] for g in groups], axis=1)
    if statistic is iqm:
        stats = _iqm_rows(sample)
    else:
        stats = np.array([statistic(row) for row in sample])
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(stats, [alpha, 1.0 - alpha])
    return float(lo), float(hi)
