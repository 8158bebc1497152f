"""DQN agent: epsilon-greedy policy, FIFO replay memory, target network."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import mlp
from .config import AgentConfig


@dataclass
class Transition:
    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray
    terminal: bool


class ReplayMemory:
    """Fixed-capacity ring buffer; the oldest transition is evicted first.

    States are stored as float32, so float32 inputs round-trip bit-identically.
    """

    def __init__(self, capacity: int, input_dim: int):
        if capacity <= 0:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.input_dim = input_dim
        self.inserted = 0
        self._s = np.zeros((0, input_dim), dtype=np.float32)
        self._s_next = np.zeros((0, input_dim), dtype=np.float32)
        self._a = np.zeros(capacity, dtype=np.int64)
        self._r = np.zeros(capacity, dtype=np.float64)
        self._terminal = np.zeros(capacity, dtype=bool)

    def __len__(self) -> int:
        return min(self.inserted, self.capacity)

    def _grow(self, needed: int) -> None:
        # state arrays grow geometrically up to capacity to avoid a large upfront allocation
        size = len(self._s)
        if needed <= size:
            return
        new = min(self.capacity, max(needed, 2 * size, 1024))
        for name in ("_s", "_s_next"):
            old = getattr(self, name)
            arr = np.zeros((new, self.input_dim), dtype=np.float32)
            arr[:size] = old
            setattr(self, name, arr)

    def store(self, t: Transition) -> None:
        i = self.inserted % self.capacity
        self._grow(i + 1)
        self._s[i] = t.s
        self._s_next[i] = t.s_next
        self._a[i] = t.a
        self._r[i] = t.r
        self._terminal[i] = t.terminal
        self.inserted += 1

    def oldest_index(self) -> int:
        return 0 if self.inserted <= self.capacity else self.inserted % self.capacity

    def get(self, k: int) -> Transition:
        """The k-th oldest stored transition."""
        if not 0 <= k < len(self):
            raise IndexError(k)
        i = (self.oldest_index() + k) % self.capacity
        return Transition(self._s[i].copy(), int(self._a[i]), float(self._r[i]), self._s_next[i].copy(), bool(self._terminal[i]))

    def sample_indices(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        return rng.choice(len(self), size=batch_size, replace=False)

    def batch(self, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return (
            self._s[idx].astype(np.float64),
            self._a[idx],
            self._r[idx],
            self._s_next[idx].astype(np.float64),
            self._terminal[idx],
        )


def store(memory: ReplayMemory, transition: Transition) -> None:
    memory.store(transition)


def epsilon_at(step: int, start: float = 1.0, end: float = 0.1, anneal_steps: int = 500_000) -> float:
    if step < 0:
        raise ValueError("step must be nonnegative")
    if anneal_steps <= 0:
        return end
    return max(end, start - (start - end) * step / anneal_steps)


def greedy(q_values: np.ndarray) -> int:
    # np.argmax returns the first maximum: ties go to the lowest index
    return int(np.argmax(q_values))


def select_action(q_values: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    n = len(q_values)
    if epsilon > 0 and rng.random() < epsilon:
        return int(rng.integers(n))
    return greedy(q_values)


def td_targets(rewards, s_next, terminal, target_params: mlp.NetworkParams, gamma: float) -> np.ndarray:
    rewards = np.asarray(rewards, dtype=np.float64)
    terminal = np.asarray(terminal, dtype=bool)
    if gamma == 0.0:
        return rewards.copy()
    q_next = mlp.forward(target_params, np.atleast_2d(s_next)).max(axis=1)
    return np.where(terminal, rewards, rewards + gamma * q_next)


@dataclass
class AgentStats:
    updates: int = 0
    syncs: int = 0
    first_update_step: int | None = None
    sync_steps: list[int] = field(default_factory=list)
    last_loss: float = float("nan")


class DQNAgent:
    def __init__(
        self,
        cfg: AgentConfig,
        input_dim: int,
        seed: int,
        explore_rng: np.random.Generator | None = None,
        replay_rng: np.random.Generator | None = None,
        params: mlp.NetworkParams | None = None,
        n_actions: int = mlp.N_OUTPUTS,
    ):
        self.cfg = cfg
        self.input_dim = input_dim
        self.online = params if params is not None else mlp.init(input_dim, seed, cfg.hidden, n_actions)
        self.target = self.online.copy()
        self.opt = mlp.OptimizerState.for_params(self.online, cfg.lr, cfg.rms_decay, cfg.rms_eps)
        self.memory = ReplayMemory(cfg.memory_capacity, input_dim)
        ss = np.random.SeedSequence(seed)
        e, r = ss.spawn(2)
        self.explore_rng = explore_rng if explore_rng is not None else np.random.default_rng(e)
        self.replay_rng = replay_rng if replay_rng is not None else np.random.default_rng(r)
        self.stats = AgentStats()

    def epsilon(self, step: int) -> float:
        c = self.cfg
        return epsilon_at(step, c.eps_start, c.eps_end, c.eps_anneal)

    def q_values(self, state: np.ndarray) -> np.ndarray:
        return mlp.forward(self.online, state)

    def act(self, state: np.ndarray, step: int, epsilon: float | None = None) -> int:
        eps = self.epsilon(step) if epsilon is None else epsilon
        if eps >= 1.0:
            # skip the forward pass; the draw sequence matches select_action
            self.explore_rng.random()
            return int(self.explore_rng.integers(self.online.sizes[-1]))
        return select_action(self.q_values(state), eps, self.explore_rng)

    def observe(self, t: Transition) -> None:
        self.memory.store(t)

    def learn(self) -> float:
        c = self.cfg
        idx = self.memory.sample_indices(c.batch_size, self.replay_rng)
        s, a, r, s_next, term = self.memory.batch(idx)
        y = td_targets(r, s_next, term, self.target, c.gamma)
        grads, loss_value = mlp.backward(self.online, s, a, y, c.huber_delta)
        mlp.rmsprop_step(self.online, self.opt, grads)
        return loss_value

    def sync_target(self) -> None:
        mlp.copy_into(self.target, self.online)

    def train_tick(self, global_step: int) -> dict | None:
        """Run the update schedule for the environment step just completed."""
        c = self.cfg
        info = {}
        if len(self.memory) >= c.warmup and global_step % c.train_every == 0:
            self.stats.last_loss = self.learn()
            self.stats.updates += 1
            if self.stats.first_update_step is None:
                self.stats.first_update_step = global_step
            info["update"] = True
            info["loss"] = self.stats.last_loss
        if global_step > 0 and global_step % c.target_sync == 0:
            self.sync_target()
            self.stats.syncs += 1
            self.stats.sync_steps.append(global_step)
            info["sync"] = True
        return info or None
