import dataclasses

import numpy as np
import pytest

from semdrive import config, sim


@pytest.fixture
def highway_cfg():
    return config.highway_defaults()


@pytest.fixture
def merging_cfg():
    return config.merging_defaults()


def empty_scene(scenario="highway", **overrides):
    base = config.highway_defaults() if scenario == "highway" else config.merging_defaults()
    cfg = dataclasses.replace(base, density=0.0, **overrides)
    return sim.build_scenario(scenario, cfg, 0)


def add_vehicle(scene, s, lane, v=20.0, vid=None, length=5.0, v_desired=None):
    if vid is None:
        vid = scene.next_id
        scene.next_id += 1
    veh = sim.Vehicle(id=vid, s=s, v=v, lane=lane, length=length, v_desired=v if v_desired is None else v_desired)
    scene.vehicles.append(veh)
    scene.prev_s[veh.id] = veh.s
    scene.prev_lane[veh.id] = veh.lane
    return veh


def set_ego(scene, s=100.0, lane=0, v=20.0):
    ego = scene.ego
    ego.s, ego.lane, ego.v = s, lane, v
    scene.prev_s[ego.id] = s
    scene.prev_lane[ego.id] = lane
    return ego


def small_run_config(tmp_path, **harness):
    cfg = config.RunConfig()
    cfg.harness = dataclasses.replace(cfg.harness, **harness)
    cfg.agent = dataclasses.replace(
        cfg.agent, hidden=(16, 8), warmup=64, batch_size=8, target_sync=200, eps_anneal=300, memory_capacity=5000
    )
    cfg.out_dir = str(tmp_path)
    return cfg.validate()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(passed), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
