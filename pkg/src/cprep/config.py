"""Experiment configuration: a JSON document with full-scale defaults."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .agent import DqnConfig
from .gridworld import DEFAULT_ENTITY_COUNT, PAIRINGS, Cmdp, GridMap
from .representation import ReprConfig, parse_repr_name
from .transfer import DEFAULT_SEEDS

__all__ = ["ConfigError", "ExperimentConfig", "default_context_counts", "load_config", "dump_config"]

# (n_src, n_tgt) per pairing; GN+EL has only 36 contexts in total
_CONTEXT_COUNTS = {"EL": (100, 200), "CM": (250, 500), "PO": (40, 80)}
_GN_EL_COUNTS = (8, 16)
FULL_BUDGET = 4_000_000


class ConfigError(ValueError):
    pass


def default_context_counts(env_kind: str, context_space: str) -> tuple[int, int]:
    if (env_kind, context_space) == ("GN", "EL"):
        return _GN_EL_COUNTS
    return _CONTEXT_COUNTS[context_space]


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    env_kind: str
    context_space: str
    representation: str = "CTL+C-PREP"
    entity_count: int | None = None
    map_size: tuple[int, int] = (6, 6)
    sector_size: tuple[int, int] = (2, 2)
    cm_wall_range: tuple[int, int] = (1, 12)
    n_src: int | None = None
    n_tgt: int | None = None
    steps_src: int = FULL_BUDGET
    steps_tgt: int = FULL_BUDGET
    dqn: DqnConfig = field(default_factory=DqnConfig)
    seeds: tuple[int, ...] = DEFAULT_SEEDS
    eval_episodes: int = 50
    n_evals: int = 100
    threshold_grid_size: int = 51
    track_generalization: bool = True
    output_dir: str = "runs"

    def __post_init__(self):
        if (self.env_kind, self.context_space) not in PAIRINGS:
            raise ConfigError(f"unsupported pairing {self.env_kind}+{self.context_space}")
        if not self.name or "/" in self.name or self.name.startswith("."):
            raise ConfigError(f"invalid config name {self.name!r}")
        try:
            parse_repr_name(self.representation)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        for attr in ("map_size", "sector_size", "cm_wall_range", "seeds"):
            object.__setattr__(self, attr, tuple(int(x) for x in getattr(self, attr)))
        if self.entity_count is None:
            object.__setattr__(self, "entity_count", DEFAULT_ENTITY_COUNT[self.env_kind])
        src, tgt = default_context_counts(self.env_kind, self.context_space)
        if self.n_src is None:
            object.__setattr__(self, "n_src", src)
        if self.n_tgt is None:
            object.__setattr__(self, "n_tgt", tgt)
        if isinstance(self.dqn, dict):
            object.__setattr__(self, "dqn", _dqn_from_dict(self.dqn))
        positive = ("n_src", "n_tgt", "steps_src", "steps_tgt", "eval_episodes", "n_evals")
        for attr in positive:
            if int(getattr(self, attr)) <= 0:
                raise ConfigError(f"{attr} must be positive")
        if self.threshold_grid_size < 2:
            raise ConfigError("threshold_grid_size must be at least 2")
        if not self.seeds or len(set(self.seeds)) != len(self.seeds):
            raise ConfigError("seeds must be a non-empty list of distinct integers")
        h, w = self.map_size
        sh, sw = self.sector_size
        if sh < 1 or sw < 1 or h % sh or w % sw:
            raise ConfigError(f"sector size {self.sector_size} does not tile map {self.map_size}")
        try:
            self.cmdp()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def cmdp(self) -> Cmdp:
        return Cmdp(self.env_kind, self.context_space, GridMap(*self.map_size), self.entity_count,
                    self.dqn.gamma, cm_wall_range=self.cm_wall_range)

    def repr_config(self) -> ReprConfig:
        return parse_repr_name(self.representation)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        d["dqn"]["hidden"] = list(self.dqn.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        missing = [k for k in ("name", "env_kind", "context_space") if k not in d]
        if missing:
            raise ConfigError(f"missing config keys: {', '.join(missing)}")
        d = dict(d)
        if "dqn" in d:
            d["dqn"] = _dqn_from_dict(d["dqn"])
        try:
            return cls(**d)
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None

    def replace(self, **changes) -> ExperimentConfig:
        return dataclasses.replace(self, **changes)


def _dqn_from_dict(d) -> DqnConfig:
    if isinstance(d, DqnConfig):
        return d
    if not isinstance(d, dict):
        raise ConfigError("dqn must be an object")
    known = {f.name for f in dataclasses.fields(DqnConfig)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ConfigError(f"unknown dqn keys: {', '.join(unknown)}")
    try:
        return DqnConfig(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"dqn: {exc}") from None


def load_config(text: str) -> ExperimentConfig:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    return ExperimentConfig.from_dict(d)


def dump_config(cfg: ExperimentConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"
