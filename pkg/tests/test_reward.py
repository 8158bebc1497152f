import dataclasses
import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from semdrive import reward, sim
from semdrive.config import RewardConfig
from semdrive.reward import RuleFlags, StateClass, check_rules, classify, compute_reward
from semdrive.sim import Action

from conftest import add_vehicle, empty_scene, set_ego

CFG = RewardConfig()


def test_classify_priority():
    flags = RuleFlags(pass_right=True, safe_distance=True)
    assert classify(True, flags) is StateClass.COLLISION
    assert classify(False, RuleFlags(safe_distance=True)) is StateClass.RULE_VIOLATION
    assert classify(False, RuleFlags()) is StateClass.NOMINAL


def test_classify_accepts_step_events():
    ev = sim.StepEvents(collision=True, kind=sim.Collision.OFF_ROAD)
    assert classify(ev, RuleFlags()) is StateClass.COLLISION


def test_pass_right_flag_on_highway():
    scene = empty_scene()
    set_ego(scene, s=100.0, lane=0, v=25.0)
    add_vehicle(scene, 110.0, 1, v=20.0)
    flags = check_rules(scene, Action.DEFAULT, CFG)
    assert flags.pass_right


def test_pass_right_outside_window_not_flagged():
    scene = empty_scene()
    set_ego(scene, s=100.0, lane=0, v=25.0)
    add_vehicle(scene, 125.0, 1, v=20.0)
    assert not check_rules(scene, Action.DEFAULT, CFG).pass_right


def test_ramp_spawned_ego_may_pass_right():
    scene = empty_scene("merging")
    set_ego(scene, s=100.0, lane=0, v=20.0)
    add_vehicle(scene, 105.0, 1, v=15.0)
    scene, ev = sim.step(scene, Action.ACCELERATE)
    flags = check_rules(scene, Action.ACCELERATE, CFG)
    assert not flags.pass_right and not flags.not_enter


def test_entering_ramp_from_highway_flags_not_enter():
    scene = empty_scene("merging")
    set_ego(scene, s=100.0, lane=1, v=20.0)
    scene, ev = sim.step(scene, Action.LANE_CHANGE_RIGHT)
    assert check_rules(scene, Action.LANE_CHANGE_RIGHT, CFG).not_enter


def test_alone_on_rightmost_no_flags():
    scene = empty_scene()
    set_ego(scene, s=100.0, lane=0, v=25.0)
    assert not check_rules(scene, Action.DEFAULT, CFG).any()


def test_keep_right_when_right_lane_free():
    scene = empty_scene()
    set_ego(scene, s=100.0, lane=1, v=25.0)
    assert check_rules(scene, Action.DEFAULT, CFG).keep_right
    add_vehicle(scene, 130.0, 0, v=25.0)
    assert not check_rules(scene, Action.DEFAULT, CFG).keep_right


def test_keep_right_not_required_next_to_ramp():
    scene = empty_scene("merging")
    set_ego(scene, s=100.0, lane=1, v=20.0)
    assert not check_rules(scene, Action.DEFAULT, CFG).keep_right


def test_safe_distance():
    scene = empty_scene()
    set_ego(scene, s=100.0, lane=0, v=20.0)
    add_vehicle(scene, 100.0 + 5.0 + 35.0, 0, v=20.0)  # gap 35 < 1.8 * 20
    assert check_rules(scene, Action.DEFAULT, CFG).safe_distance
    scene.vehicles[-1].s = 100.0 + 5.0 + 37.0
    assert not check_rules(scene, Action.DEFAULT, CFG).safe_distance


def test_collision_reward_ignores_desired_speed():
    cfg = dataclasses.replace(CFG, theta_t=1.0, r_collision=-1.0)
    r = compute_reward(StateClass.COLLISION, 25.0, Action.DEFAULT, RuleFlags(), 25.0, cfg)
    assert r == -1.0


def test_nominal_default_at_desired_speed():
    assert compute_reward(StateClass.NOMINAL, 25.0, Action.DEFAULT, RuleFlags(), 25.0, CFG) == 1.0


def test_nominal_lane_change_at_desired_speed():
    r = compute_reward(StateClass.NOMINAL, 25.0, Action.LANE_CHANGE_LEFT, RuleFlags(), 25.0, CFG)
    assert r == pytest.approx(1.0 + 1.0 * -0.05)


def test_rule_reward_sums_weighted_penalties():
    cfg = dataclasses.replace(CFG, theta_p=2.0, theta_s=0.5)
    r = compute_reward(StateClass.RULE_VIOLATION, 25.0, Action.DEFAULT, RuleFlags(pass_right=True, safe_distance=True), 25.0, cfg)
    assert r == pytest.approx(2.0 * -0.5 + 0.5 * -0.5)


WEIGHTS = ["theta_t", "theta_p", "theta_n", "theta_s", "theta_k", "theta_a"]


def test_collision_priority_masking_exhaustive():
    values = [0.0, 0.5, 1.0, 3.0]
    flag_sets = [RuleFlags(*bits) for bits in itertools.product([False, True], repeat=4)]
    for theta_t in values:
        expected = theta_t * CFG.r_collision
        for others in itertools.product(values, repeat=5):
            cfg = dataclasses.replace(CFG, theta_t=theta_t, **dict(zip(WEIGHTS[1:], others)))
            for flags, action, speed, theta_v in itertools.product(flag_sets, list(Action), [0.0, 20.0], [12.0, 20.0]):
                assert compute_reward(StateClass.COLLISION, speed, action, flags, theta_v, cfg) == expected


@given(
    weight=st.sampled_from(WEIGHTS),
    lo=st.floats(0, 5),
    delta=st.floats(0, 5),
    bits=st.tuples(*[st.booleans()] * 4),
    action=st.sampled_from(list(Action)),
    speed=st.floats(0, 40),
)
def test_reward_monotone_in_penalty_weights(weight, lo, delta, bits, action, speed):
    flags = RuleFlags(*bits)
    c = classify(weight == "theta_t", flags)
    r_lo = compute_reward(c, speed, action, flags, 25.0, dataclasses.replace(CFG, **{weight: lo}))
    r_hi = compute_reward(c, speed, action, flags, 25.0, dataclasses.replace(CFG, **{weight: lo + delta}))
    assert r_hi <= r_lo + 1e-12


@given(d1=st.floats(0, 9.9), d2=st.floats(0, 9.9))
def test_velocity_term_peaks_at_desired(d1, d2):
    r0 = reward.velocity_reward(0.0, CFG)
    assert r0 == CFG.r_velocity_max
    a, b = sorted((d1, d2))
    if b - a > 1e-9:
        assert reward.velocity_reward(b, CFG) < reward.velocity_reward(a, CFG)
        assert reward.velocity_reward(-b, CFG) < reward.velocity_reward(-a, CFG)


@pytest.mark.parametrize("scale", [0.1, 0.5, 2.0, 10.0])
@pytest.mark.parametrize("ego_v,theta_v", [(20.0, 25.0), (25.0, 25.0), (30.0, 22.0)])
def test_nominal_scaling_keeps_greedy_order(scale, ego_v, theta_v):
    base = CFG
    scaled = dataclasses.replace(CFG, r_velocity_max=CFG.r_velocity_max * scale, r_action_base=CFG.r_action_base * scale)

    def rewards(cfg):
        out = []
        for a in (Action.ACCELERATE, Action.DECELERATE, Action.DEFAULT):
            scene = empty_scene()
            set_ego(scene, s=100.0, lane=0, v=ego_v)
            scene, ev = sim.step(scene, a)
            rb = reward.evaluate_step(scene, a, ev, theta_v, cfg)
            assert rb.s_class is StateClass.NOMINAL
            out.append(rb.reward)
        return np.array(out)

    assert list(np.argsort(rewards(base), kind="stable")) == list(np.argsort(rewards(scaled), kind="stable"))
