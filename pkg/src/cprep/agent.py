"""DQN over augmented observations, written directly in numpy.

The network is a ReLU MLP with hand-written backprop, trained with Adam on
the mean squared TD error against a periodically synced target network.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .gridworld import EnvState
from .representation import ContextBank, ContextEntry
from .rm import RmRunState

__all__ = [
    "DqnConfig",
    "QNetwork",
    "AdamState",
    "ReplayBuffer",
    "epsilon_at",
    "td_targets",
    "train_step",
    "Episode",
    "EpisodeRecord",
    "TrainingResult",
    "run_training",
    "save_checkpoint",
    "load_checkpoint",
]


@dataclass(frozen=True)
class DqnConfig:
    hidden: tuple[int, ...] = (64, 64)
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    gamma: float = 0.99
    buffer_size: int = 1_000_000
    batch_size: int = 32
    learning_starts: int = 1_000
    train_freq: int = 4
    gradient_steps: int = 4
    target_update_interval: int = 10_000
    exploration_fraction: float = 0.5
    eps_start: float = 1.0
    eps_end: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        for name in ("lr", "buffer_size", "batch_size", "train_freq", "gradient_steps",
                     "target_update_interval", "exploration_fraction"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.learning_starts < 0:
            raise ValueError("learning_starts must be non-negative")


# --------------------------------------------------------------------------- network


class QNetwork:
    """MLP: input -> hidden... (ReLU) -> |A| (linear).  Weights are (fan_in, fan_out).

    All parameters live in one flat vector ``theta``; ``params`` are views
    into it, so the optimizer can update everything in a single pass.
    """

    def __init__(self, sizes: Sequence[int], rng: np.random.Generator | int | None = 0):
        self.sizes = tuple(int(s) for s in sizes)
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        self._bind(np.empty(self.n_params))
        for k, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            bound = 1.0 / np.sqrt(fan_in)
            self.params[2 * k][...] = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            self.params[2 * k + 1][...] = rng.uniform(-bound, bound, size=fan_out)

    @property
    def shapes(self) -> list[tuple[int, ...]]:
        out = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            out += [(fan_in, fan_out), (fan_out,)]
        return out

    @property
    def n_params(self) -> int:
        return self._layout()[-1][1]

    def _layout(self) -> list[tuple[int, int, tuple]]:
        cached = getattr(self, "_slices", None)
        if cached is None:
            cached, off = [], 0
            for shape in self.shapes:
                n = int(np.prod(shape))
                cached.append((off, off + n, shape))
                off += n
            self._slices = cached
        return cached

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def unflatten(self, flat: np.ndarray) -> list[np.ndarray]:
        return [flat[a:b].reshape(shape) for a, b, shape in self._layout()]

    def _bind(self, theta: np.ndarray) -> None:
        self.theta = theta
        self.params = self.unflatten(theta)

    def copy(self) -> QNetwork:
        other = QNetwork.__new__(QNetwork)
        other.sizes = self.sizes
        other._bind(self.theta.copy())
        return other

    def load_params(self, params: Sequence[np.ndarray]) -> None:
        if [np.shape(p) for p in params] != self.shapes:
            raise ValueError("parameter shapes do not match")
        for dst, src in zip(self.params, params):
            dst[...] = src

    def forward(self, obs: np.ndarray) -> np.ndarray:
        x = np.asarray(obs, dtype=float)
        if x.shape[-1] != self.sizes[0]:
            raise ValueError(f"observation width {x.shape[-1]} != network input {self.sizes[0]}")
        h = x
        last = self.n_layers - 1
        for k in range(self.n_layers):
            h = h @ self.params[2 * k]
            h += self.params[2 * k + 1]
            if k < last:
                np.maximum(h, 0.0, out=h)
        return h

    __call__ = forward

    def loss_and_grads(self, obs: np.ndarray, actions: np.ndarray, targets: np.ndarray,
                       out: np.ndarray | None = None):
        """Mean squared error between Q(obs)[action] and targets.

        Returns ``(loss, flat_grad)``; ``flat_grad`` is laid out like ``theta``.
        """
        acts = [np.asarray(obs, dtype=float)]
        last = self.n_layers - 1
        for k in range(self.n_layers):
            z = acts[-1] @ self.params[2 * k]
            z += self.params[2 * k + 1]
            if k < last:
                np.maximum(z, 0.0, out=z)
            acts.append(z)
        q = acts[-1]
        n = q.shape[0]
        rows = np.arange(n)
        err = q[rows, actions] - targets
        loss = float(err @ err) / n
        delta = np.zeros_like(q)
        delta[rows, actions] = (2.0 / n) * err
        flat = np.empty(self.n_params) if out is None else out
        grads = self.unflatten(flat)
        for k in range(last, -1, -1):
            np.matmul(acts[k].T, delta, out=grads[2 * k])
            np.sum(delta, axis=0, out=grads[2 * k + 1])
            if k > 0:
                delta = delta @ self.params[2 * k].T
                delta *= acts[k] > 0
        return loss, flat


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray | None = None
    v: np.ndarray | None = None

    @classmethod
    def for_network(cls, net: QNetwork, cfg: DqnConfig) -> AdamState:
        return cls(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps, 0,
                   np.zeros(net.n_params), np.zeros(net.n_params))

    def apply(self, theta: np.ndarray, grad: np.ndarray) -> None:
        """In-place update of the flat parameter vector."""
        self.step += 1
        c1 = 1.0 - self.beta1 ** self.step
        c2 = 1.0 - self.beta2 ** self.step
        m, v = self.m, self.v
        m *= self.beta1
        m += (1.0 - self.beta1) * grad
        v *= self.beta2
        v += (1.0 - self.beta2) * (grad * grad)
        denom = np.sqrt(v * (1.0 / c2))
        denom += self.eps
        theta -= (self.lr / c1) * m / denom


class ReplayBuffer:
    """Ring buffer; storage grows on demand up to ``capacity``."""

    def __init__(self, capacity: int, obs_dim: int):
        self.capacity = int(capacity)
        self.obs_dim = int(obs_dim)
        self._alloc = 0
        self.obs = np.zeros((0, obs_dim))
        self.next_obs = np.zeros((0, obs_dim))
        self.actions = np.zeros(0, dtype=np.int64)
        self.rewards = np.zeros(0)
        self.terminals = np.zeros(0, dtype=bool)
        self.size = 0
        self.pos = 0

    def __len__(self) -> int:
        return self.size

    def _grow(self) -> None:
        new = min(self.capacity, max(1024, 2 * self._alloc))
        for name in ("obs", "next_obs", "actions", "rewards", "terminals"):
            old = getattr(self, name)
            arr = np.zeros((new,) + old.shape[1:], dtype=old.dtype)
            arr[: len(old)] = old
            setattr(self, name, arr)
        self._alloc = new

    def add(self, obs, action: int, reward: float, next_obs, terminal: bool) -> None:
        if self.pos >= self._alloc:
            self._grow()
        i = self.pos
        self.obs[i] = obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_obs[i] = next_obs
        self.terminals[i] = terminal
        self.pos = (self.pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        """Distinct uniform indices: draw with replacement, redraw collisions."""
        if batch_size > self.size:
            raise ValueError(f"cannot sample {batch_size} records from {self.size}")
        if 4 * batch_size > self.size:
            return rng.choice(self.size, size=batch_size, replace=False)
        idx = rng.integers(self.size, size=batch_size)
        seen = set()
        for j, i in enumerate(idx.tolist()):
            while i in seen:
                i = int(rng.integers(self.size))
            seen.add(i)
            idx[j] = i
        return idx

    def sample(self, batch_size: int, rng: np.random.Generator):
        idx = self.sample_indices(batch_size, rng)
        return self.obs[idx], self.actions[idx], self.rewards[idx], self.next_obs[idx], self.terminals[idx]


def epsilon_at(t: int, total_steps: int, cfg: DqnConfig) -> float:
    horizon = cfg.exploration_fraction * total_steps
    if horizon <= 0 or t >= horizon:
        return cfg.eps_end
    return cfg.eps_start + (cfg.eps_end - cfg.eps_start) * (t / horizon)


def td_targets(target_net: QNetwork, rewards, next_obs, terminals, gamma: float) -> np.ndarray:
    """r + gamma * max_a' Q_target(s', a'), bootstrap dropped on true terminals."""
    boot = target_net.forward(next_obs).max(axis=1)
    boot[terminals] = 0.0
    return rewards + gamma * boot


def train_step(net: QNetwork, target_net: QNetwork, opt: AdamState, buffer: ReplayBuffer,
               cfg: DqnConfig, rng: np.random.Generator) -> float:
    if len(buffer) < max(cfg.batch_size, cfg.learning_starts):
        raise ValueError(f"buffer holds {len(buffer)} records; need {max(cfg.batch_size, cfg.learning_starts)}")
    obs, actions, rewards, next_obs, terminals = buffer.sample(cfg.batch_size, rng)
    targets = td_targets(target_net, rewards, next_obs, terminals, cfg.gamma)
    loss, grad = net.loss_and_grads(obs, actions, targets)
    opt.apply(net.theta, grad)
    return loss


# --------------------------------------------------------------------------- episodes


class RmSyncError(RuntimeError):
    pass


class Episode:
    """One episode in one context: env state, machine run and DTL segment."""

    def __init__(self, bank: ContextBank, entry: ContextEntry, s0: EnvState,
                 rng: np.random.Generator | None = None, strict: bool = False):
        self.bank = bank
        self.entry = entry
        self.s = s0
        self.rng = rng
        self.strict = strict
        self.t = 0
        self.run: RmRunState | None = None
        self._dtl = None
        if bank.cfg.needs_rm:
            self.run = RmRunState.start(entry.grm.rm, entry.grm.start(s0))
            self.u0 = self.run.current
        self.finished = False

    def _dtl_bits(self):
        if not self.bank.cfg.use_dtl:
            return None
        if self._dtl is None:
            self._dtl = self.bank.dtl_bits(self.entry, self.run.current, self.rng)
        return self._dtl

    def observation(self) -> np.ndarray:
        return self.bank.observe(self.entry, self.s, self.run, self._dtl_bits())

    def step(self, a: int) -> tuple[float, float, bool, bool]:
        """Returns (agent reward, env reward, terminal, truncated)."""
        res = self.entry.task.step(self.s, a)
        agent_r = res.reward
        terminal = res.done
        if self.run is not None:
            grm = self.entry.grm
            label = grm.labeler(self.s, a, res.next)
            u = self.run.current
            if self.run.terminated:
                rm_r = 0.0
            else:
                rm_r = self.run.advance(grm.rm, label)
            if self.run.current != u:
                self._dtl = None
            mode = self.bank.cfg.reward_mode
            if mode == "rm_raw":
                agent_r = rm_r
            elif mode == "rm_shaped":
                values = self.entry.table.values
                agent_r = rm_r + self.entry.table.gamma * values[self.run.current] - values[u]
            if self.run.terminated != res.done:
                if self.strict:
                    raise RmSyncError(
                        f"machine terminated={self.run.terminated} but env done={res.done} "
                        f"after action {a} from {self.s}"
                    )
            terminal = terminal or self.run.terminated
        self.s = res.next
        self.t += 1
        truncated = res.truncated and not terminal
        self.finished = terminal or truncated
        return agent_r, res.reward, terminal, truncated


@dataclass
class EpisodeRecord:
    context_index: int
    length: int
    env_return: float  # discounted
    agent_return: float  # discounted
    rm_start: int | None
    rm_end: int | None
    terminal: bool


@dataclass
class TrainingResult:
    net: QNetwork
    buffer: ReplayBuffer
    episodes: list[EpisodeRecord]
    losses: list[float]
    env_steps: int


def run_training(
    bank: ContextBank,
    contexts: Sequence,
    dqn: DqnConfig,
    total_steps: int,
    seed: int | np.random.Generator = 0,
    net: QNetwork | None = None,
    on_eval: Callable[[int, int, QNetwork], None] | None = None,
    n_evals: int = 100,
    strict: bool = False,
) -> TrainingResult:
    """DQN training loop over contexts sampled uniformly per episode.

    ``on_eval(progress, env_steps, net)`` is called before training
    (progress 0) and after each of ``n_evals`` equal slices of the budget.
    """
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    contexts = list(contexts)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    n_actions = bank.cmdp.n_actions
    if net is None:
        net = QNetwork((bank.width, *dqn.hidden, n_actions), rng)
    elif net.sizes[0] != bank.width or net.sizes[-1] != n_actions:
        raise ValueError(f"network {net.sizes} does not fit width {bank.width} / {n_actions} actions")
    target = net.copy()
    opt = AdamState.for_network(net, dqn)
    buffer = ReplayBuffer(dqn.buffer_size, bank.width)
    entries = [bank.entry(c) for c in contexts]
    eval_points = {int(round(k * total_steps / n_evals)): k for k in range(1, n_evals + 1)}
    episodes: list[EpisodeRecord] = []
    losses: list[float] = []
    gamma = dqn.gamma

    if on_eval is not None:
        on_eval(0, 0, net)

    t = 0
    while t < total_steps:
        ci = int(rng.integers(len(entries)))
        entry = entries[ci]
        ep = Episode(bank, entry, entry.task.reset(rng), rng, strict)
        obs = ep.observation()
        env_ret = agent_ret = 0.0
        disc = 1.0
        terminal = False
        while not ep.finished and t < total_steps:
            if rng.random() < epsilon_at(t, total_steps, dqn):
                a = int(rng.integers(n_actions))
            else:
                a = int(np.argmax(net.forward(obs)))
            agent_r, env_r, terminal, truncated = ep.step(a)
            next_obs = ep.observation()
            buffer.add(obs, a, agent_r, next_obs, terminal)
            env_ret += disc * env_r
            agent_ret += disc * agent_r
            disc *= gamma
            obs = next_obs
            t += 1
            if t % dqn.train_freq == 0 and len(buffer) >= max(dqn.batch_size, dqn.learning_starts):
                for _ in range(dqn.gradient_steps):
                    losses.append(train_step(net, target, opt, buffer, dqn, rng))
            if t % dqn.target_update_interval == 0:
                target = net.copy()
            if on_eval is not None and t in eval_points:
                on_eval(eval_points[t], t, net)
        episodes.append(EpisodeRecord(
            ci, ep.t, env_ret, agent_ret,
            ep.u0 if ep.run is not None else None,
            ep.run.current if ep.run is not None else None,
            terminal,
        ))
    return TrainingResult(net, buffer, episodes, losses, t)


# --------------------------------------------------------------------------- checkpoints

_MAGIC = b"CPQN"
_VERSION = 1


def save_checkpoint(net: QNetwork, seed: int = 0, step: int = 0) -> bytes:
    """Little-endian: magic, u32 version, u32 n_sizes, u32 sizes..., i64 seed,
    i64 step, then float64 parameters W1, b1, W2, b2, ... (weights row-major,
    shape (fan_in, fan_out))."""
    head = _MAGIC + struct.pack("<II", _VERSION, len(net.sizes))
    head += struct.pack(f"<{len(net.sizes)}I", *net.sizes)
    head += struct.pack("<qq", int(seed), int(step))
    body = np.ascontiguousarray(net.theta, dtype="<f8").tobytes()
    return head + body


def load_checkpoint(data: bytes) -> tuple[QNetwork, int, int]:
    if data[:4] != _MAGIC:
        raise ValueError("not a Q-network checkpoint")
    version, n = struct.unpack_from("<II", data, 4)
    if version != _VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = 12
    sizes = struct.unpack_from(f"<{n}I", data, off)
    off += 4 * n
    seed, step = struct.unpack_from("<qq", data, off)
    off += 16
    net = QNetwork(sizes, 0)
    if len(data) - off != 8 * net.n_params:
        raise ValueError(f"checkpoint holds {(len(data) - off) / 8:g} parameters, expected {net.n_params}")
    net.theta[:] = np.frombuffer(data, dtype="<f8", offset=off)
    return net, seed, step
