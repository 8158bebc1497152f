import dataclasses

import numpy as np
import pytest

from semdrive import mlp
from semdrive.agent import (
    DQNAgent,
    ReplayMemory,
    Transition,
    epsilon_at,
    greedy,
    select_action,
    td_targets,
)
from semdrive.config import AgentConfig

from toy_mdp import q_star, train_toy


def tr(i, dim=3, terminal=False):
    s = np.full(dim, i, dtype=np.float32)
    return Transition(s, i % 5, float(i), s + 1, terminal)


@pytest.mark.parametrize(
    "step,expected", [(0, 1.0), (250_000, 0.55), (500_000, 0.1), (2_000_000, 0.1), (125_000, 0.775)]
)
def test_epsilon_schedule(step, expected):
    assert epsilon_at(step) == pytest.approx(expected, abs=1e-12)


def test_epsilon_rejects_negative_step():
    with pytest.raises(ValueError):
        epsilon_at(-1)


def test_select_action_greedy_and_ties():
    rng = np.random.default_rng(0)
    assert select_action(np.array([0.1, 0.5, 0.3, 0.2, 0.0]), 0.0, rng) == 1
    assert greedy(np.array([0.4, 0.9, 0.9, 0.1, 0.9])) == 1


def test_select_action_uniform_when_exploring():
    rng = np.random.default_rng(1)
    n = 10_000
    counts = np.bincount([select_action(np.arange(5.0), 1.0, rng) for _ in range(n)], minlength=5)
    sigma = np.sqrt(n * 0.2 * 0.8)
    assert np.all(np.abs(counts - n / 5) < 3 * sigma)


def test_memory_size_and_fifo_eviction():
    mem = ReplayMemory(4, 3)
    for i in range(6):
        mem.store(tr(i))
    assert len(mem) == 4
    assert [mem.get(k).r for k in range(4)] == [2.0, 3.0, 4.0, 5.0]


def test_memory_roundtrip_bit_identical(rng):
    mem = ReplayMemory(10, 140)
    s = rng.uniform(-1, 1, 140).astype(np.float32)
    s2 = rng.uniform(-1, 1, 140).astype(np.float32)
    mem.store(Transition(s, 3, -0.25, s2, True))
    got = mem.get(0)
    assert got.s.tobytes() == s.tobytes() and got.s_next.tobytes() == s2.tobytes()
    assert (got.a, got.r, got.terminal) == (3, -0.25, True)


def test_memory_grows_past_initial_allocation():
    mem = ReplayMemory(5000, 2)
    for i in range(3000):
        mem.store(tr(i, 2))
    assert len(mem) == 3000 and mem.get(2999).r == 2999.0


def test_sample_indices_are_distinct_and_in_range():
    mem = ReplayMemory(100, 2)
    for i in range(50):
        mem.store(tr(i, 2))
    idx = mem.sample_indices(32, np.random.default_rng(0))
    assert len(set(idx.tolist())) == 32 and idx.min() >= 0 and idx.max() < 50


def test_td_targets():
    p = mlp.NetworkParams([(np.zeros((2, 5)), np.array([0.0, 2.0, 1.0, -1.0, 0.5]))])
    r = np.array([1.0, -1.0])
    s_next = np.zeros((2, 2))
    y = td_targets(r, s_next, np.array([False, True]), p, 0.9)
    assert y == pytest.approx([1.0 + 0.9 * 2.0, -1.0])
    assert td_targets(r, s_next, np.array([False, False]), p, 0.0) == pytest.approx(r)


def small_cfg(**kw):
    base = AgentConfig(hidden=(8,), warmup=100, batch_size=8, target_sync=500, memory_capacity=1000)
    return dataclasses.replace(base, **kw)


def fill(agent, n, dim=4):
    for i in range(n):
        agent.observe(Transition(np.zeros(dim, np.float32), i % 5, 0.0, np.zeros(dim, np.float32), False))


def test_train_tick_threshold():
    agent = DQNAgent(small_cfg(), 4, seed=0)
    fill(agent, 99)
    assert agent.train_tick(100) is None
    fill(agent, 1)
    assert agent.train_tick(101) is None  # not a multiple of four
    assert agent.train_tick(104)["update"]
    assert agent.stats.first_update_step == 104


def test_train_tick_threshold_at_default_warmup():
    agent = DQNAgent(small_cfg(warmup=50_000, memory_capacity=60_000), 1, seed=0)
    fill(agent, 49_999, dim=1)
    assert agent.train_tick(49_996) is None
    fill(agent, 1, dim=1)
    assert agent.train_tick(50_000)["update"]


def test_sync_copies_values_not_references():
    agent = DQNAgent(small_cfg(), 4, seed=0)
    agent.online.layers[0][0][0, 0] += 1.0
    assert mlp.digest(agent.target) != mlp.digest(agent.online)
    agent.sync_target()
    assert mlp.digest(agent.target) == mlp.digest(agent.online)
    agent.online.layers[0][0][0, 0] += 1.0
    assert mlp.digest(agent.target) != mlp.digest(agent.online)


def test_target_frozen_between_syncs():
    agent = DQNAgent(small_cfg(lr=1e-2, target_sync=40), 4, seed=0)
    rng = np.random.default_rng(0)
    for i in range(100):
        agent.observe(Transition(rng.uniform(-1, 1, 4).astype(np.float32), int(rng.integers(5)), 1.0,
                                 rng.uniform(-1, 1, 4).astype(np.float32), False))
    h0 = mlp.digest(agent.target)
    for step in range(1, 40):
        agent.train_tick(step)
        assert mlp.digest(agent.target) == h0
    agent.train_tick(40)
    assert mlp.digest(agent.target) == mlp.digest(agent.online) != h0


def test_act_full_exploration_matches_select_action_draws():
    cfg = small_cfg()
    a = DQNAgent(cfg, 4, seed=0, explore_rng=np.random.default_rng(7))
    rng = np.random.default_rng(7)
    s = np.zeros(4, np.float32)
    for _ in range(50):
        assert a.act(s, 0) == select_action(a.q_values(s), 1.0, rng)


def test_toy_mdp_converges():
    agent, steps = train_toy(seed=0)
    assert steps < 50_000
    q = np.array([agent.q_values(np.eye(2)[i]) for i in range(2)])
    assert np.max(np.abs(q - q_star())) < 1e-2
