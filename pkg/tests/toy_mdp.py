"""Two-state, two-action deterministic MDP with a value-iteration oracle.

The action picks the next state; rewards depend on (state, action).
"""
import dataclasses

import numpy as np

from semdrive.agent import DQNAgent, Transition
from semdrive.config import AgentConfig

REWARD = np.array([[0.0, 1.0], [0.5, 0.2]])
GAMMA = 0.9


def q_star(gamma=GAMMA, tol=1e-13):
    q = np.zeros((2, 2))
    while True:
        nxt = REWARD + gamma * q.max(axis=1)[None, :]
        if np.max(np.abs(nxt - q)) < tol:
            return nxt
        q = nxt


def toy_config(**kw):
    cfg = AgentConfig(
        hidden=(16,),
        lr=1e-3,
        gamma=GAMMA,
        warmup=200,
        batch_size=32,
        train_every=1,
        target_sync=100,
        memory_capacity=5_000,
        eps_start=1.0,
        eps_end=1.0,
        eps_anneal=1,
    )
    return dataclasses.replace(cfg, **kw)


def train_toy(seed=0, max_steps=50_000, tol=1e-2, cfg=None):
    """Train until every Q-value is within ``tol / 2`` of Q* (checked at target syncs)."""
    cfg = cfg or toy_config()
    agent = DQNAgent(cfg, 2, seed, n_actions=2)
    target = q_star(cfg.gamma)
    eye = np.eye(2, dtype=np.float32)
    s = 0
    for step in range(1, max_steps + 1):
        a = agent.act(eye[s], step)
        agent.observe(Transition(eye[s], a, float(REWARD[s, a]), eye[a], False))
        agent.train_tick(step)
        s = a
        # step-decayed learning rate so the fit can settle below the tolerance
        agent.opt.lr = cfg.lr * 0.5 ** max(0, (step - 10_000) // 5_000)
        if step % cfg.target_sync == 0:
            q = agent.q_values(eye.astype(np.float64))
            if np.max(np.abs(q - target)) < tol / 2:
                return agent, step
    return agent, max_steps
