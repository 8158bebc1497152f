"""Run configuration: dataclass sections, YAML loading, validation and overrides.

Every default carries the value used in the original DQN highway study where one
exists; ``describe_defaults`` lists the provenance of each.
"""
from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass, field, fields
from typing import Any

import yaml


class ConfigError(ValueError):
    """Raised for invalid configuration. ``field`` names the offending key."""

    def __init__(self, message: str, field: str | None = None, line: int | None = None):
        self.field = field
        self.line = line
        prefix = ""
        if line is not None:
            prefix += f"line {line}: "
        if field is not None:
            prefix += f"{field}: "
        super().__init__(prefix + message)


KMH = 1.0 / 3.6


@dataclass
class IDMParams:
    accel: float = 1.5
    decel: float = 2.0
    time_headway: float = 1.5
    min_gap: float = 2.0
    delta: float = 4.0
    max_brake: float = 9.0


@dataclass
class ScenarioConfig:
    scenario_id: str = "highway"
    course_length: float = 1000.0
    n_lanes: int = 3
    # merging only: the acceleration lane occupies index 0 on [0, ramp_length]
    ramp_length: float = 0.0
    road_extension: float = 200.0
    density: float = 12.0  # vehicles per km per lane
    bg_speed_min: float = 18.0
    bg_speed_max: float = 28.0
    vehicle_length: float = 5.0
    lane_width: float = 3.5
    v_max: float = 40.0
    a_cmd: float = 2.0
    dt: float = 1.0
    idm: IDMParams = field(default_factory=IDMParams)
    theta_v_min: float = 80 * KMH
    theta_v_max: float = 115 * KMH
    ego_speed_min: float = 10.0
    ego_speed_max: float = 35.0
    departure_delay_max: int = 20
    ego_start_s: float = 0.0

    @property
    def road_length(self) -> float:
        return self.course_length + self.road_extension


def highway_defaults() -> ScenarioConfig:
    return ScenarioConfig()


def merging_defaults() -> ScenarioConfig:
    return ScenarioConfig(
        scenario_id="merging",
        course_length=600.0,
        n_lanes=2,
        ramp_length=250.0,
        density=12.0,
        bg_speed_min=12.0,
        bg_speed_max=22.0,
        theta_v_min=40 * KMH,
        theta_v_max=80 * KMH,
        ego_speed_min=5.0,
        ego_speed_max=20.0,
    )


SCENARIO_DEFAULTS = {"highway": highway_defaults, "merging": merging_defaults}


@dataclass
class EncoderConfig:
    lateral: int = 2
    ahead: int = 2
    behind: int = 1
    sensor_range: float = 100.0
    v_norm: float = 40.0
    half_lane_width: float = 1.75
    heading_norm: float = math.pi / 4
    lane_end_cap: float = 500.0
    lane_index_norm: float = 4.0
    sentinel: float = -2.0


@dataclass
class RewardConfig:
    theta_t: float = 1.0
    theta_p: float = 1.0
    theta_n: float = 1.0
    theta_s: float = 1.0
    theta_k: float = 1.0
    theta_a: float = 1.0
    r_collision: float = -1.0
    r_pass_right: float = -0.5
    r_not_enter: float = -0.5
    r_safe_distance: float = -0.5
    r_keep_right: float = -0.5
    r_action_base: float = -0.05
    r_velocity_max: float = 1.0
    omega_cap: float = 10.0
    safe_time_headway: float = 1.8
    pass_right_window: float = 20.0
    keep_right_ahead: float = 40.0
    keep_right_behind: float = 20.0


@dataclass
class AgentConfig:
    hidden: tuple[int, ...] = (512, 512, 256, 64)
    memory_capacity: int = 500_000
    warmup: int = 50_000
    batch_size: int = 32
    train_every: int = 4
    gamma: float = 0.9
    target_sync: int = 50_000
    eps_start: float = 1.0
    eps_end: float = 0.1
    eps_anneal: int = 500_000
    lr: float = 1e-5
    rms_decay: float = 0.95
    rms_eps: float = 1e-8
    huber_delta: float = 1.0


@dataclass
class HarnessConfig:
    budget: int = 2_000_000
    max_episode_steps: int = 200
    scenarios: tuple[str, ...] = ("highway",)
    seed: int = 0
    checkpoint_every: int = 100_000
    metrics_window: int = 10_000
    save_run_state: bool = False


@dataclass
class EvalConfig:
    n_runs: int = 100
    max_steps: int = 2000


@dataclass
class RunConfig:
    scenario: dict[str, ScenarioConfig] = field(
        default_factory=lambda: {k: f() for k, f in SCENARIO_DEFAULTS.items()}
    )
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    agent: AgentConfig = field(default_factory=AgentConfig)
    harness: HarnessConfig = field(default_factory=HarnessConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    out_dir: str = "runs/default"

    def validate(self) -> "RunConfig":
        validate(self)
        return self


# provenance for --print-defaults
_TRAINING = "published training setup"
DEFAULT_SOURCES = {
    **{
        f"agent.{k}": _TRAINING
        for k in (
            "memory_capacity", "warmup", "batch_size", "train_every", "gamma", "target_sync",
            "eps_start", "eps_end", "eps_anneal", "lr", "rms_decay", "hidden",
        )
    },
    "harness.budget": _TRAINING,
    "harness.max_episode_steps": _TRAINING,
    "encoder.lateral": "published vehicle scope",
    "encoder.ahead": "published vehicle scope",
    "encoder.behind": "published vehicle scope",
    "scenario.highway.theta_v_min": "published desired-speed range (80 km/h)",
    "scenario.highway.theta_v_max": "published desired-speed range (115 km/h)",
    "scenario.merging.theta_v_min": "published desired-speed range (40 km/h)",
    "scenario.merging.theta_v_max": "published desired-speed range (80 km/h)",
    "eval.n_runs": "published evaluation protocol",
}


def _coerce(value: Any, target: Any, path: str) -> Any:
    if dataclasses.is_dataclass(target):
        if not isinstance(value, dict):
            raise ConfigError("expected a mapping", path)
        return _merge(target, value, path)
    if isinstance(target, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false", "1", "0"):
            return value.lower() in ("true", "1")
        raise ConfigError(f"expected a boolean, got {value!r}", path)
    if isinstance(target, int):
        if isinstance(value, bool) or not isinstance(value, (int, float, str)):
            raise ConfigError(f"expected an integer, got {value!r}", path)
        try:
            f = float(value)
        except ValueError:
            raise ConfigError(f"expected an integer, got {value!r}", path) from None
        if f != int(f):
            raise ConfigError(f"expected an integer, got {value!r}", path)
        return int(f)
    if isinstance(target, float):
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"expected a number, got {value!r}", path) from None
    if isinstance(target, tuple):
        if isinstance(value, str):
            value = [v.strip() for v in value.split(",") if v.strip()]
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"expected a list, got {value!r}", path)
        if target and isinstance(target[0], int):
            return tuple(_coerce(v, 0, path) for v in value)
        return tuple(str(v) for v in value)
    if isinstance(target, str):
        return str(value)
    return value


def _merge(obj: Any, data: dict, path: str) -> Any:
    known = {f.name for f in fields(obj)}
    for key in data:
        if key not in known:
            raise ConfigError("unknown key", f"{path}.{key}" if path else key)
    updates = {}
    for f in fields(obj):
        if f.name in data:
            sub = f"{path}.{f.name}" if path else f.name
            updates[f.name] = _coerce(data[f.name], getattr(obj, f.name), sub)
    return dataclasses.replace(obj, **updates)


def from_dict(data: dict) -> RunConfig:
    data = dict(data)
    if "scenario" not in data:
        raise ConfigError("missing required section", "scenario")
    scen = data.pop("scenario")
    if not isinstance(scen, dict) or not scen:
        raise ConfigError("expected a non-empty mapping of scenarios", "scenario")
    scenarios = {}
    for name, body in scen.items():
        if name not in SCENARIO_DEFAULTS:
            raise ConfigError("unknown scenario (highway, merging)", f"scenario.{name}")
        body = body or {}
        if not isinstance(body, dict):
            raise ConfigError("expected a mapping", f"scenario.{name}")
        scenarios[name] = _merge(SCENARIO_DEFAULTS[name](), body, f"scenario.{name}")
    cfg = _merge(RunConfig(), data, "")
    cfg.scenario = scenarios
    return validate(cfg)


def load(path: str, overrides: list[str] | None = None) -> RunConfig:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark else None
        raise ConfigError(str(exc.problem), line=line) from None
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", line=1)
    for item in overrides or []:
        apply_override(data, item)
    cfg = from_dict(data)
    env_out = os.environ.get("SEMDRIVE_OUT_DIR")
    if env_out and "out_dir" not in data:
        cfg.out_dir = env_out
    return cfg


SHORT_KEYS = {
    "budget": "harness.budget",
    "seed": "harness.seed",
    "scenarios": "harness.scenarios",
    "runs": "eval.n_runs",
}


def apply_override(data: dict, item: str) -> None:
    """Apply ``key=value`` (dotted key, YAML-parsed value) to a raw config mapping."""
    if "=" not in item:
        raise ConfigError(f"override must be key=value, got {item!r}")
    key, raw = item.split("=", 1)
    key = SHORT_KEYS.get(key.strip(), key.strip())
    value = yaml.safe_load(raw)
    node = data
    parts = key.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError("cannot override inside a scalar", key)
    node[parts[-1]] = value


def validate(cfg: RunConfig) -> RunConfig:
    for name, sc in cfg.scenario.items():
        p = f"scenario.{name}"
        if sc.scenario_id != name:
            raise ConfigError(f"scenario_id must be {name!r}", f"{p}.scenario_id")
        for attr in ("course_length", "vehicle_length", "lane_width", "v_max", "dt", "a_cmd"):
            if not getattr(sc, attr) > 0:
                raise ConfigError("must be positive", f"{p}.{attr}")
        if sc.n_lanes < 1:
            raise ConfigError("must be >= 1", f"{p}.n_lanes")
        if sc.density < 0:
            raise ConfigError("must be >= 0", f"{p}.density")
        if name == "merging" and not 0 < sc.ramp_length < sc.course_length:
            raise ConfigError("must be in (0, course_length)", f"{p}.ramp_length")
        if name == "highway" and sc.ramp_length != 0:
            raise ConfigError("highway has no ramp", f"{p}.ramp_length")
        if not 0 <= sc.bg_speed_min <= sc.bg_speed_max <= sc.v_max:
            raise ConfigError("need 0 <= bg_speed_min <= bg_speed_max <= v_max", f"{p}.bg_speed_max")
        if not 0 <= sc.ego_speed_min <= sc.ego_speed_max <= sc.v_max:
            raise ConfigError("need 0 <= ego_speed_min <= ego_speed_max <= v_max", f"{p}.ego_speed_max")
        if not 0 < sc.theta_v_min <= sc.theta_v_max:
            raise ConfigError("need 0 < theta_v_min <= theta_v_max", f"{p}.theta_v_max")
        if sc.departure_delay_max < 0:
            raise ConfigError("must be >= 0", f"{p}.departure_delay_max")
    e = cfg.encoder
    if e.lateral < 0 or e.ahead < 1 or e.behind < 0:
        raise ConfigError("need lateral >= 0, ahead >= 1, behind >= 0", "encoder")
    if not e.sensor_range > 0:
        raise ConfigError("must be positive", "encoder.sensor_range")
    if -1.0 <= e.sentinel <= 1.0:
        raise ConfigError("sentinel must lie outside [-1, 1]", "encoder.sentinel")
    for f in fields(cfg.reward):
        v = getattr(cfg.reward, f.name)
        if not math.isfinite(v):
            raise ConfigError("must be finite", f"reward.{f.name}")
        if f.name.startswith("theta_") and v < 0:
            raise ConfigError("weights must be nonnegative", f"reward.{f.name}")
    a = cfg.agent
    for attr in ("memory_capacity", "batch_size", "train_every", "target_sync"):
        if getattr(a, attr) <= 0:
            raise ConfigError("must be positive", f"agent.{attr}")
    if a.warmup < a.batch_size:
        raise ConfigError("must be >= batch_size", "agent.warmup")
    if not 0 <= a.gamma <= 1:
        raise ConfigError("must be in [0, 1]", "agent.gamma")
    if not a.lr > 0:
        raise ConfigError("must be positive", "agent.lr")
    h = cfg.harness
    if h.budget <= 0:
        raise ConfigError("must be positive", "harness.budget")
    if h.max_episode_steps <= 0:
        raise ConfigError("must be positive", "harness.max_episode_steps")
    if not h.scenarios:
        raise ConfigError("at least one scenario required", "harness.scenarios")
    for s in h.scenarios:
        if s not in cfg.scenario:
            raise ConfigError(f"scenario {s!r} has no scenario section", "harness.scenarios")
    if h.metrics_window <= 0 or h.checkpoint_every <= 0:
        raise ConfigError("cadences must be positive", "harness")
    if cfg.eval.n_runs <= 0:
        raise ConfigError("must be positive", "eval.n_runs")
    return cfg


def to_dict(cfg: RunConfig) -> dict:
    def conv(x):
        if dataclasses.is_dataclass(x):
            return {f.name: conv(getattr(x, f.name)) for f in fields(x)}
        if isinstance(x, dict):
            return {k: conv(v) for k, v in x.items()}
        if isinstance(x, tuple):
            return [conv(v) for v in x]
        return x

    return conv(cfg)


def dump(cfg: RunConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=False)


def describe_defaults() -> str:
    lines = []
    flat = _flatten(to_dict(RunConfig()))
    for key, value in flat:
        src = DEFAULT_SOURCES.get(key)
        lines.append(f"{key} = {value}    # {src or 'chosen here'}")
    return "\n".join(lines)


def _flatten(d: dict, prefix: str = "") -> list[tuple[str, Any]]:
    out = []
    for k, v in d.items():
        key = f"{prefix}.{k}" if prefix else k
        if isinstance(v, dict):
            out.extend(_flatten(v, key))
        else:
            out.append((key, v))
    return out
