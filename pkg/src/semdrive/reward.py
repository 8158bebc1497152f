"""Prioritized, parameterized reward.

Three priority classes are evaluated in order: collision, traffic-rule violation,
driving style. Only the terms of the highest active class contribute.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, fields

from .config import RewardConfig
from .sim import Action, LaneType, StepEvents, TrafficScene
from .state import behavior_adaptation


class StateClass(enum.Enum):
    COLLISION = "collision"
    RULE_VIOLATION = "rule_violation"
    NOMINAL = "nominal"


@dataclass(frozen=True)
class RuleFlags:
    pass_right: bool = False
    not_enter: bool = False
    safe_distance: bool = False
    keep_right: bool = False

    def any(self) -> bool:
        return self.pass_right or self.not_enter or self.safe_distance or self.keep_right

    def as_dict(self) -> dict[str, bool]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _on_acceleration_lane(scene: TrafficScene) -> bool:
    ego = scene.ego
    seg = scene.lane(ego.lane, ego.s)
    return seg is not None and seg.lane_type == LaneType.ACCELERATION


def check_rules(scene: TrafficScene, action: Action | int | None, cfg: RewardConfig) -> RuleFlags:
    ego = scene.ego
    on_ramp = _on_acceleration_lane(scene)

    pass_right = False
    if not on_ramp:
        pass_right = any(
            v.lane > ego.lane and abs(v.s - ego.s) <= cfg.pass_right_window and ego.v > v.v
            for v in scene.vehicles
            if not v.is_ego
        )

    not_enter = on_ramp and scene.ego_entered_ramp

    leader_gap = None
    for v in scene.vehicles:
        if v.is_ego or v.lane != ego.lane or v.s <= ego.s:
            continue
        gap = v.s - ego.s - 0.5 * (v.length + ego.length)
        if leader_gap is None or gap < leader_gap:
            leader_gap = gap
    safe_distance = leader_gap is not None and leader_gap < cfg.safe_time_headway * ego.v

    keep_right = False
    right = scene.lane(ego.lane - 1, ego.s)
    if right is not None and right.lane_type == LaneType.NORMAL:
        keep_right = not any(
            v.lane == right.index and -cfg.keep_right_behind <= v.s - ego.s <= cfg.keep_right_ahead
            for v in scene.vehicles
            if not v.is_ego
        )
    return RuleFlags(pass_right, not_enter, safe_distance, keep_right)


def classify(events: StepEvents | bool, flags: RuleFlags) -> StateClass:
    collided = events if isinstance(events, bool) else events.collision
    if collided:
        return StateClass.COLLISION
    if flags.any():
        return StateClass.RULE_VIOLATION
    return StateClass.NOMINAL


def velocity_reward(omega: float, cfg: RewardConfig) -> float:
    return cfg.r_velocity_max * max(0.0, 1.0 - abs(omega) / cfg.omega_cap)


def action_reward(action: Action | int, cfg: RewardConfig) -> float:
    return 0.0 if Action(action) == Action.DEFAULT else cfg.theta_a * cfg.r_action_base


def rule_reward(flags: RuleFlags, cfg: RewardConfig) -> float:
    r = 0.0
    if flags.pass_right:
        r += cfg.theta_p * cfg.r_pass_right
    if flags.not_enter:
        r += cfg.theta_n * cfg.r_not_enter
    if flags.safe_distance:
        r += cfg.theta_s * cfg.r_safe_distance
    if flags.keep_right:
        r += cfg.theta_k * cfg.r_keep_right
    return r


def compute_reward(
    s_class: StateClass,
    scene: TrafficScene | float,
    action: Action | int,
    flags: RuleFlags,
    theta_v: float,
    cfg: RewardConfig,
) -> float:
    """Reward of the class-selected terms. ``scene`` may be the ego speed directly."""
    if s_class is StateClass.COLLISION:
        return cfg.theta_t * cfg.r_collision
    if s_class is StateClass.RULE_VIOLATION:
        return rule_reward(flags, cfg)
    omega = behavior_adaptation(scene, theta_v)
    return action_reward(action, cfg) + velocity_reward(omega, cfg)


@dataclass(frozen=True)
class RewardBreakdown:
    reward: float
    s_class: StateClass
    flags: RuleFlags


def evaluate_step(scene: TrafficScene, action, events: StepEvents, theta_v: float, cfg: RewardConfig) -> RewardBreakdown:
    flags = check_rules(scene, action, cfg)
    c = classify(events, flags)
    return RewardBreakdown(compute_reward(c, scene, action, flags, theta_v, cfg), c, flags)
