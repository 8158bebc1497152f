"""Training loop: episodes, randomized starts, scenario alternation, metrics, checkpoints.

RNG streams, all derived from ``harness.seed`` via ``numpy.random.SeedSequence``:

    0  exploration (epsilon-greedy draws)
    1  replay sampling
    2  start randomization and theta_v sampling
    3  traffic (seeds for every scene built)

The network initialization uses ``harness.seed`` directly.
"""
from __future__ import annotations

import csv
import io
import logging
import os
import pickle
from dataclasses import dataclass, field

import numpy as np

from . import mlp, reward, sim
from .agent import DQNAgent, Transition
from .config import RunConfig, ScenarioConfig
from .state import Encoder

log = logging.getLogger(__name__)

METRICS_COLUMNS = [
    "step",
    "episodes",
    "collision_rate_window",
    "rule_violation_ratio_window",
    "mean_reward_window",
    "epsilon",
]


@dataclass(frozen=True)
class Start:
    departure_delay: int
    lane: int
    speed: float
    theta_v: float


def make_streams(seed: int) -> dict[str, np.random.Generator]:
    names = ("explore", "replay", "start", "traffic")
    return {n: np.random.default_rng(s) for n, s in zip(names, np.random.SeedSequence(seed).spawn(4))}


def randomize_start(
    scene: sim.TrafficScene,
    rng: np.random.Generator,
    theta_range: tuple[float, float],
    theta_v: float | None = None,
) -> tuple[sim.TrafficScene, float, Start]:
    """Departure delay, lane, speed and theta_v drawn uniformly from the scenario ranges.

    In the merging scenario the ego always starts at the acceleration lane entry.
    A fixed ``theta_v`` skips the theta draw (evaluation with a set desired speed).
    """
    cfg = scene.config
    delay = int(rng.integers(0, cfg.departure_delay_max + 1))
    if scene.scenario_id == "merging":
        lane = sim.ego_entry_lane(scene)
    else:
        lanes = sim.traffic_lanes(scene)
        lane = int(lanes[int(rng.integers(len(lanes)))])
    speed = float(rng.uniform(cfg.ego_speed_min, cfg.ego_speed_max))
    if theta_v is None:
        theta_v = float(rng.uniform(*theta_range))
    sim.remove_ego(scene)
    sim.advance_traffic(scene, delay)
    sim.place_ego(scene, lane, cfg.ego_start_s, speed)
    return scene, theta_v, Start(delay, lane, speed, theta_v)


def theta_range(cfg: ScenarioConfig) -> tuple[float, float]:
    return cfg.theta_v_min, cfg.theta_v_max


@dataclass
class EpisodeSummary:
    scenario: str
    steps: int
    terminal: bool
    reset: bool
    end_reason: str  # collision | max_steps | course_end | budget
    total_reward: float
    collisions: int
    violations: int


@dataclass
class ScenarioSlot:
    scene: sim.TrafficScene
    theta_v: float
    needs_reset: bool = False


@dataclass
class Window:
    steps: int = 0
    collisions: int = 0
    violations: int = 0
    reward: float = 0.0


@dataclass
class RunState:
    global_step: int
    episodes: int
    scenario_index: int
    slots: dict[str, ScenarioSlot]
    agent: DQNAgent
    streams: dict[str, np.random.Generator]
    window: Window = field(default_factory=Window)
    metrics_rows: list[list] = field(default_factory=list)
    resets: int = 0
    episode_log: list[EpisodeSummary] = field(default_factory=list)

    @property
    def active_scenario(self) -> str:
        return list(self.slots)[self.scenario_index]


class Trainer:
    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.encoder = Encoder(cfg.encoder)

    # -- setup ----------------------------------------------------------------

    def new_scene(self, name: str, state: RunState) -> ScenarioSlot:
        sc = self.cfg.scenario[name]
        seed = int(state.streams["traffic"].integers(2**63))
        scene = sim.build_scenario(name, sc, seed)
        scene, theta_v, _ = randomize_start(scene, state.streams["start"], theta_range(sc))
        return ScenarioSlot(scene, theta_v)

    def init_state(self) -> RunState:
        h = self.cfg.harness
        streams = make_streams(h.seed)
        agent = DQNAgent(
            self.cfg.agent,
            self.encoder.dim,
            h.seed,
            explore_rng=streams["explore"],
            replay_rng=streams["replay"],
        )
        state = RunState(0, 0, 0, {}, agent, streams)
        for name in h.scenarios:
            state.slots[name] = self.new_scene(name, state)
        return state

    # -- episodes -------------------------------------------------------------

    def run_episode(self, state: RunState, budget: int | None = None) -> EpisodeSummary:
        """One episode on the active scenario.

        A collision ends the episode as terminal but keeps the scene, so the next
        episode of this scenario continues from the resolved state. Reaching the
        course end or the step limit ends it without a terminal flag and the scene
        is rebuilt on next use.
        """
        cfg = self.cfg
        name = state.active_scenario
        slot = state.slots[name]
        sc = cfg.scenario[name]
        if slot.needs_reset or slot.scene.ego.s >= sc.course_length:
            slot = state.slots[name] = self.new_scene(name, state)
            state.resets += 1
        scene, theta_v = slot.scene, slot.theta_v
        agent = state.agent
        budget = cfg.harness.budget if budget is None else budget

        s = self.encoder(scene, theta_v).astype(np.float32)
        steps = collisions = violations = 0
        total = 0.0
        end_reason = "max_steps"
        while True:
            a = agent.act(s, state.global_step)
            scene, events = sim.step(scene, a)
            rb = reward.evaluate_step(scene, a, events, theta_v, cfg.reward)
            s_next = self.encoder(scene, theta_v).astype(np.float32)
            terminal = events.collision
            agent.observe(Transition(s, a, rb.reward, s_next, terminal))
            state.global_step += 1
            steps += 1
            total += rb.reward
            collisions += int(terminal)
            violated = rb.flags.pass_right or rb.flags.safe_distance
            violations += int(violated)
            self._record(state, rb.reward, terminal, violated)
            agent.train_tick(state.global_step)
            if terminal:
                sim.resolve_collision(scene, events)
                end_reason = "collision"
                break
            if scene.ego.s >= sc.course_length:
                end_reason = "course_end"
                break
            if steps >= cfg.harness.max_episode_steps:
                end_reason = "max_steps"
                break
            if state.global_step >= budget:
                end_reason = "budget"
                break
            s = s_next

        reset = end_reason in ("course_end", "max_steps")
        slot.needs_reset = reset
        state.episodes += 1
        if len(state.slots) > 1:
            state.scenario_index = (state.scenario_index + 1) % len(state.slots)
        summary = EpisodeSummary(name, steps, end_reason == "collision", reset, end_reason, total, collisions, violations)
        state.episode_log.append(summary)
        if len(state.episode_log) > 1000:
            del state.episode_log[:-1000]
        return summary

    def _record(self, state: RunState, r: float, collided: bool, violated: bool) -> None:
        w = state.window
        w.steps += 1
        w.collisions += int(collided)
        w.violations += int(violated)
        w.reward += r
        if state.global_step % self.cfg.harness.metrics_window == 0:
            state.metrics_rows.append(
                [
                    state.global_step,
                    state.episodes,
                    f"{w.collisions / w.steps:.6f}",
                    f"{w.violations / w.steps:.6f}",
                    f"{w.reward / w.steps:.6f}",
                    f"{state.agent.epsilon(state.global_step):.6f}",
                ]
            )
            state.window = Window()

    # -- training -------------------------------------------------------------

    def train(self, state: RunState | None = None, progress=None) -> RunState:
        cfg = self.cfg
        h = cfg.harness
        out = cfg.out_dir
        try:
            os.makedirs(out, exist_ok=True)
            probe = os.path.join(out, ".write_probe")
            with open(probe, "w") as fh:
                fh.write("")
            os.remove(probe)
        except OSError as exc:
            raise OSError(f"output directory {out!r} is not writable: {exc}") from exc

        state = state if state is not None else self.init_state()
        next_ckpt = (state.global_step // h.checkpoint_every + 1) * h.checkpoint_every
        while state.global_step < h.budget:
            self.run_episode(state)
            if state.global_step >= next_ckpt:
                self.checkpoint(state)
                next_ckpt = (state.global_step // h.checkpoint_every + 1) * h.checkpoint_every
            if progress is not None:
                progress(state)
        self.checkpoint(state, final=True)
        return state

    def checkpoint(self, state: RunState, final: bool = False) -> None:
        out = self.cfg.out_dir
        meta = self.checkpoint_meta(state)
        mlp.save_checkpoint(state.agent.online, os.path.join(out, "checkpoint"), meta)
        if not final:
            mlp.save_checkpoint(
                state.agent.online, os.path.join(out, "checkpoints", f"step_{state.global_step:09d}"), meta
            )
        self.write_metrics(state)
        if self.cfg.harness.save_run_state:
            save_run_state(state, os.path.join(out, "run_state.pkl"))
        log.info("checkpoint at step %d (episodes %d)", state.global_step, state.episodes)

    def checkpoint_meta(self, state: RunState) -> dict:
        e = self.cfg.encoder
        return {
            "training_step": state.global_step,
            "episodes": state.episodes,
            "updates": state.agent.stats.updates,
            "target_syncs": state.agent.stats.syncs,
            "scenarios": ",".join(self.cfg.harness.scenarios),
            "scope": f"{e.lateral},{e.ahead},{e.behind}",
            "sensor_range": e.sensor_range,
            "seed": self.cfg.harness.seed,
        }

    def write_metrics(self, state: RunState) -> None:
        path = os.path.join(self.cfg.out_dir, "metrics.csv")
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRICS_COLUMNS)
        w.writerows(state.metrics_rows)
        tmp = path + ".tmp"
        with open(tmp, "w", newline="") as fh:
            fh.write(buf.getvalue())
        os.replace(tmp, path)


def save_run_state(state: RunState, path: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        pickle.dump(state, fh, protocol=pickle.HIGHEST_PROTOCOL)
    os.replace(tmp, path)


def load_run_state(path: str) -> RunState:
    with open(path, "rb") as fh:
        return pickle.load(fh)


def train(cfg: RunConfig, resume_from: str | None = None, progress=None) -> RunState:
    """Train per ``cfg``; writes checkpoints and ``metrics.csv`` under ``cfg.out_dir``."""
    trainer = Trainer(cfg)
    state = load_run_state(resume_from) if resume_from else None
    return trainer.train(state, progress)


def read_metrics(path: str) -> list[dict[str, float]]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]
