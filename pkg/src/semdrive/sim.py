"""Deterministic lane-based traffic simulator.

Lanes are straight and parallel; a vehicle is described by its lane index and the
longitudinal coordinate ``s`` of its center. Lane index 0 is the rightmost lane.
Background traffic follows the Intelligent Driver Model and never changes lanes.
The ego vehicle is driven by discrete semantic actions, one per decision interval.
"""
from __future__ import annotations

import copy
import dataclasses
import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .config import ConfigError, IDMParams, ScenarioConfig


class Action(enum.IntEnum):
    """Ego actions. The integer value is the index of the matching Q-network output."""

    ACCELERATE = 0
    DECELERATE = 1
    LANE_CHANGE_LEFT = 2
    LANE_CHANGE_RIGHT = 3
    DEFAULT = 4


N_ACTIONS = len(Action)
LANE_CHANGES = (Action.LANE_CHANGE_LEFT, Action.LANE_CHANGE_RIGHT)


class LaneType(enum.IntEnum):
    NORMAL = 0
    ACCELERATION = 1


@dataclass(frozen=True)
class LaneSegment:
    id: int
    index: int
    lane_type: LaneType
    start_s: float
    end_s: float

    def __post_init__(self):
        if not self.end_s > self.start_s:
            raise ValueError(f"lane {self.id}: end_s must exceed start_s")

    def contains(self, s: float) -> bool:
        return self.start_s <= s <= self.end_s


@dataclass
class Vehicle:
    id: int
    s: float
    v: float
    lane: int
    d: float = 0.0
    phi: float = 0.0
    length: float = 5.0
    is_ego: bool = False
    v_desired: float = 0.0


class Collision(str, enum.Enum):
    VEHICLE = "vehicle"
    OFF_ROAD = "off_road"
    RAMP_END = "ramp_end"


@dataclass
class StepEvents:
    collision: bool = False
    kind: Collision | None = None
    kinds: list[Collision] = field(default_factory=list)
    colliders: list[int] = field(default_factory=list)
    lane_changed: bool = False
    entered_ramp: bool = False


@dataclass
class TrafficScene:
    scenario_id: str
    config: ScenarioConfig
    lanes: list[LaneSegment]
    vehicles: list[Vehicle]
    time_step: int = 0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    next_id: int = 0
    # set when the ego moved onto the acceleration lane from the highway
    ego_entered_ramp: bool = False
    # positions before the last step, used for swept collision checks
    prev_s: dict[int, float] = field(default_factory=dict)
    prev_lane: dict[int, int] = field(default_factory=dict)

    @property
    def ego(self) -> Vehicle:
        for v in self.vehicles:
            if v.is_ego:
                return v
        raise LookupError("scene has no ego vehicle")

    @property
    def background(self) -> list[Vehicle]:
        return [v for v in self.vehicles if not v.is_ego]

    def lane(self, index: int, s: float) -> LaneSegment | None:
        """The segment with lane index ``index`` existing at position ``s``, if any."""
        for seg in self.lanes:
            if seg.index == index and seg.contains(s):
                return seg
        return None

    def copy(self) -> "TrafficScene":
        """Independent copy; the (read-only) config and lane segments are shared."""
        return dataclasses.replace(
            self,
            lanes=list(self.lanes),
            vehicles=[dataclasses.replace(v) for v in self.vehicles],
            rng=copy.deepcopy(self.rng),
            prev_s=dict(self.prev_s),
            prev_lane=dict(self.prev_lane),
        )


def _build_lanes(cfg: ScenarioConfig) -> list[LaneSegment]:
    road = cfg.road_length
    if cfg.scenario_id == "highway":
        return [LaneSegment(k, k, LaneType.NORMAL, 0.0, road) for k in range(cfg.n_lanes)]
    if cfg.scenario_id == "merging":
        lanes = [LaneSegment(0, 0, LaneType.ACCELERATION, 0.0, cfg.ramp_length)]
        lanes += [LaneSegment(k, k, LaneType.NORMAL, 0.0, road) for k in range(1, cfg.n_lanes + 1)]
        return lanes
    raise ConfigError(f"unknown scenario {cfg.scenario_id!r}", "scenario_id")


def traffic_lanes(scene: TrafficScene) -> list[int]:
    """Lane indices that carry background traffic (all normal lanes)."""
    return [seg.index for seg in scene.lanes if seg.lane_type == LaneType.NORMAL]


def ego_entry_lane(scene: TrafficScene) -> int:
    return 0 if scene.scenario_id == "merging" else min(traffic_lanes(scene))


def _min_spacing(cfg: ScenarioConfig) -> float:
    return cfg.vehicle_length + cfg.idm.min_gap


def build_scenario(scenario_id: str, cfg: ScenarioConfig, seed: int) -> TrafficScene:
    """Initialize a scene: lanes, background vehicles, and the ego at its default start."""
    if cfg.scenario_id != scenario_id:
        raise ConfigError(f"config is for {cfg.scenario_id!r}, not {scenario_id!r}", "scenario_id")
    for name in ("course_length", "vehicle_length", "lane_width", "dt", "v_max"):
        if not getattr(cfg, name) > 0:
            raise ConfigError("must be positive", name)
    if cfg.density < 0:
        raise ConfigError("must be nonnegative", "density")
    scene = TrafficScene(scenario_id, cfg, _build_lanes(cfg), [], rng=np.random.default_rng(seed))
    if cfg.density > 0:
        mean_headway = 1000.0 / cfg.density
        if mean_headway <= _min_spacing(cfg):
            raise ConfigError(
                f"density {cfg.density} veh/km leaves no room for vehicles of spacing "
                f"{_min_spacing(cfg)} m",
                "density",
            )
        for k in traffic_lanes(scene):
            _populate_lane(scene, k, mean_headway)
    lane = ego_entry_lane(scene)
    place_ego(scene, lane, cfg.ego_start_s, 0.5 * (cfg.ego_speed_min + cfg.ego_speed_max))
    return scene


def _new_background(scene: TrafficScene, lane: int, s: float, v: float, v_des: float) -> Vehicle:
    veh = Vehicle(
        id=scene.next_id, s=s, v=v, lane=lane, length=scene.config.vehicle_length, v_desired=v_des
    )
    scene.next_id += 1
    return veh


def _sample_desired(scene: TrafficScene) -> float:
    cfg = scene.config
    return float(scene.rng.uniform(cfg.bg_speed_min, cfg.bg_speed_max))


def _populate_lane(scene: TrafficScene, lane: int, mean_headway: float) -> None:
    cfg = scene.config
    spacing = _min_spacing(cfg)
    extra = mean_headway - spacing
    s = float(scene.rng.uniform(0.0, mean_headway))
    placed: list[Vehicle] = []
    while s < cfg.road_length:
        v_des = _sample_desired(scene)
        placed.append(_new_background(scene, lane, s, v_des, v_des))
        s += spacing + float(scene.rng.exponential(extra))
    # start every vehicle at a speed its leader gap supports
    for rear, front in zip(placed, placed[1:]):
        gap = front.s - rear.s - cfg.vehicle_length
        rear.v = min(rear.v, max(0.0, gap - cfg.idm.min_gap) / cfg.idm.time_headway)
    scene.vehicles.extend(placed)


def place_ego(scene: TrafficScene, lane: int, s: float, v: float) -> Vehicle:
    """Insert (or move) the ego. Background vehicles in its immediate neighbourhood are removed."""
    cfg = scene.config
    scene.vehicles = [veh for veh in scene.vehicles if not veh.is_ego]
    clear_behind = cfg.vehicle_length + cfg.idm.min_gap + cfg.idm.time_headway * cfg.v_max * 0.5
    # room to brake with a_cmd down to the slowest background speed, so no start forces a crash
    closing = max(0.0, v - cfg.bg_speed_min)
    clear_ahead = cfg.vehicle_length + cfg.idm.min_gap + cfg.idm.time_headway * v + closing**2 / (2 * cfg.a_cmd)
    scene.vehicles = [
        veh
        for veh in scene.vehicles
        if veh.lane != lane or not (s - clear_behind < veh.s < s + clear_ahead)
    ]
    ego = Vehicle(
        id=-1, s=s, v=min(max(v, 0.0), cfg.v_max), lane=lane, length=cfg.vehicle_length, is_ego=True
    )
    scene.vehicles.append(ego)
    scene.ego_entered_ramp = False
    scene.prev_s = {veh.id: veh.s for veh in scene.vehicles}
    scene.prev_lane = {veh.id: veh.lane for veh in scene.vehicles}
    return ego


def remove_ego(scene: TrafficScene) -> None:
    scene.vehicles = [veh for veh in scene.vehicles if not veh.is_ego]


# --- car following ---------------------------------------------------------


def idm_acceleration(v: float, v_desired: float, gap: float | None, dv: float, p: IDMParams) -> float:
    """IDM acceleration; ``dv`` is own speed minus leader speed, ``gap`` bumper to bumper."""
    v_desired = max(v_desired, 1e-3)
    free = 1.0 - (v / v_desired) ** p.delta
    if gap is None:
        acc = p.accel * free
    else:
        s_star = p.min_gap + max(0.0, v * p.time_headway + v * dv / (2.0 * math.sqrt(p.accel * p.decel)))
        acc = p.accel * (free - (s_star / max(gap, 1e-2)) ** 2)
    return min(p.accel, max(-p.max_brake, acc))


def _ballistic(s: float, v: float, acc: float, dt: float) -> tuple[float, float]:
    v_new = v + acc * dt
    if v_new < 0.0:
        # stops within the interval
        return s - v * v / (2.0 * acc), 0.0
    return s + 0.5 * (v + v_new) * dt, v_new


def _idm_motion(veh: Vehicle, leader: Vehicle | None, p: IDMParams, dt: float) -> tuple[float, float]:
    if leader is None:
        acc = idm_acceleration(veh.v, veh.v_desired, None, 0.0, p)
        return _ballistic(veh.s, veh.v, acc, dt)
    gap = leader.s - veh.s - 0.5 * (leader.length + veh.length)
    acc = idm_acceleration(veh.v, veh.v_desired, gap, veh.v - leader.v, p)
    s, v = _ballistic(veh.s, veh.v, acc, dt)
    # leaders never reverse, so their start-of-interval rear bumper bounds the follower
    limit = leader.s - 0.5 * (leader.length + veh.length)
    if s > limit:
        s, v = max(veh.s, limit), min(v, leader.v)
    return s, v


def leader_of(scene: TrafficScene, vehicle: Vehicle) -> Vehicle | None:
    best = None
    for other in scene.vehicles:
        if other is vehicle or other.lane != vehicle.lane:
            continue
        if other.s > vehicle.s or (other.s == vehicle.s and other.id > vehicle.id):
            if best is None or other.s < best.s:
                best = other
    return best


def background_driver_step(scene: TrafficScene, vehicle: Vehicle, dt: float) -> Vehicle:
    """Advance one background vehicle by ``dt`` using IDM against its lane leader."""
    if vehicle.is_ego:
        raise ValueError("background_driver_step called on the ego vehicle")
    s, v = _idm_motion(vehicle, leader_of(scene, vehicle), scene.config.idm, dt)
    return dataclasses.replace(vehicle, s=s, v=v)


# --- stepping --------------------------------------------------------------


def _ego_longitudinal(s: float, v: float, acc: float, dt: float, v_max: float) -> tuple[float, float]:
    """Constant acceleration with v clamped to [0, v_max]; exact piecewise integration."""
    if acc > 0 and v + acc * dt > v_max:
        t = max(0.0, (v_max - v) / acc)
        return s + v * t + 0.5 * acc * t * t + v_max * (dt - t), v_max
    if acc < 0 and v + acc * dt < 0:
        t = v / -acc
        return s + v * t + 0.5 * acc * t * t, 0.0
    return s + v * dt + 0.5 * acc * dt * dt, v + acc * dt


def _advance_background(scene: TrafficScene, dt: float) -> None:
    p = scene.config.idm
    by_lane: dict[int, list[Vehicle]] = {}
    for veh in scene.vehicles:
        by_lane.setdefault(veh.lane, []).append(veh)
    # all accelerations come from the start-of-interval state
    moves: list[tuple[Vehicle, float, float]] = []
    for lane_vehicles in by_lane.values():
        lane_vehicles.sort(key=lambda x: (x.s, x.id))
        for i, veh in enumerate(lane_vehicles):
            if veh.is_ego:
                continue
            leader = lane_vehicles[i + 1] if i + 1 < len(lane_vehicles) else None
            moves.append((veh, *_idm_motion(veh, leader, p, dt)))
    for veh, s, v in moves:
        veh.s, veh.v = s, v


def _spawn_and_despawn(scene: TrafficScene, dt: float) -> None:
    cfg = scene.config
    scene.vehicles = [v for v in scene.vehicles if v.is_ego or v.s <= cfg.road_length]
    if cfg.density <= 0:
        return
    mean_speed = 0.5 * (cfg.bg_speed_min + cfg.bg_speed_max)
    rate = cfg.density / 1000.0 * mean_speed * dt
    for k in traffic_lanes(scene):
        arrivals = int(scene.rng.poisson(rate))
        if arrivals == 0:
            continue
        v_des = _sample_desired(scene)
        nearest = None
        for veh in scene.vehicles:
            if veh.lane == k and (nearest is None or veh.s < nearest.s):
                nearest = veh
        v0 = v_des
        if nearest is not None:
            gap = nearest.s - cfg.vehicle_length
            if gap < _min_spacing(cfg):
                continue  # entry blocked, arrival rejected
            v0 = min(v_des, max(0.0, gap - cfg.idm.min_gap) / cfg.idm.time_headway)
        scene.vehicles.append(_new_background(scene, k, 0.0, v0, v_des))


def advance_traffic(scene: TrafficScene, n_steps: int) -> None:
    """Run background traffic only (no ego present) for ``n_steps`` intervals."""
    dt = scene.config.dt
    for _ in range(n_steps):
        _advance_background(scene, dt)
        _spawn_and_despawn(scene, dt)


def step(scene: TrafficScene, action: Action | int, dt: float | None = None) -> tuple[TrafficScene, StepEvents]:
    """Advance the scene by one decision interval with the given ego action.

    The scene is updated in place and returned together with the events detected
    after the update.
    """
    cfg = scene.config
    dt = cfg.dt if dt is None else dt
    action = Action(action)
    scene.prev_s = {v.id: v.s for v in scene.vehicles}
    scene.prev_lane = {v.id: v.lane for v in scene.vehicles}

    _advance_background(scene, dt)

    ego = scene.ego
    acc = {Action.ACCELERATE: cfg.a_cmd, Action.DECELERATE: -cfg.a_cmd}.get(action, 0.0)
    ego.s, ego.v = _ego_longitudinal(ego.s, ego.v, acc, dt, cfg.v_max)

    events = StepEvents()
    if action in LANE_CHANGES:
        target = ego.lane + (1 if action == Action.LANE_CHANGE_LEFT else -1)
        seg = scene.lane(target, ego.s)
        if seg is not None:
            was_on_ramp = _on_ramp(scene, ego)
            ego.lane = target
            events.lane_changed = True
            if seg.lane_type == LaneType.ACCELERATION and not was_on_ramp:
                scene.ego_entered_ramp = True
                events.entered_ramp = True
            elif seg.lane_type != LaneType.ACCELERATION:
                scene.ego_entered_ramp = False

    _spawn_and_despawn(scene, dt)
    scene.time_step += 1

    flag, kind, colliders, kinds = _collisions(scene, action)
    events.collision, events.kind, events.colliders, events.kinds = flag, kind, colliders, kinds
    return scene, events


def _on_ramp(scene: TrafficScene, veh: Vehicle) -> bool:
    for seg in scene.lanes:
        if seg.index == veh.lane and seg.lane_type == LaneType.ACCELERATION:
            return True
    return False


def _pair_collides(scene: TrafficScene, a: Vehicle, b: Vehicle) -> bool:
    if a.lane != b.lane:
        return False
    if abs(a.s - b.s) < 0.5 * (a.length + b.length):
        return True
    # swept check: both stayed in this lane and their order flipped during the interval
    pa, pb = scene.prev_s.get(a.id), scene.prev_s.get(b.id)
    if pa is None or pb is None:
        return False
    if scene.prev_lane.get(a.id) != a.lane or scene.prev_lane.get(b.id) != b.lane:
        return False
    return (pa - pb) * (a.s - b.s) < 0


def vehicles_collide(scene: TrafficScene, a: Vehicle, b: Vehicle) -> bool:
    """Symmetric pairwise collision predicate."""
    return _pair_collides(scene, a, b)


def _collisions(scene: TrafficScene, attempted: Action | int | None):
    ego = scene.ego
    kinds: list[Collision] = []
    colliders = sorted(v.id for v in scene.vehicles if not v.is_ego and _pair_collides(scene, ego, v))
    if colliders:
        kinds.append(Collision.VEHICLE)
    if attempted is not None and Action(attempted) in LANE_CHANGES:
        prev = scene.prev_lane.get(ego.id, ego.lane)
        if ego.lane == prev:
            kinds.append(Collision.OFF_ROAD)
    for seg in scene.lanes:
        if seg.index == ego.lane and seg.lane_type == LaneType.ACCELERATION and ego.s > seg.end_s:
            if scene.lane(ego.lane, ego.s) is None:
                kinds.append(Collision.RAMP_END)
            break
    return bool(kinds), (kinds[0] if kinds else None), colliders, kinds


def detect_collision(scene: TrafficScene, attempted_action: Action | int | None = None) -> tuple[bool, Collision | None]:
    """Collision flag and primary kind for the ego after the last step."""
    flag, kind, _, _ = _collisions(scene, attempted_action)
    return flag, kind


def resolve_collision(scene: TrafficScene, events: StepEvents) -> None:
    """Make the scene collision-free so it can continue without a reset.

    Colliding background vehicles are removed. An ego that overran the ramp end is
    moved laterally onto the adjacent highway lane at the same position and speed.
    """
    if not events.collision:
        return
    ego = scene.ego
    if Collision.RAMP_END in events.kinds:
        ego.lane += 1
        scene.ego_entered_ramp = False
    gone = set(events.colliders)
    half = ego.length
    scene.vehicles = [
        v
        for v in scene.vehicles
        if v.is_ego or (v.id not in gone and not (v.lane == ego.lane and abs(v.s - ego.s) < half))
    ]
    scene.prev_s = {v.id: v.s for v in scene.vehicles}
    scene.prev_lane = {v.id: v.lane for v in scene.vehicles}


def snapshot(scene: TrafficScene) -> dict:
    """JSON-serializable view of the scene for trace emission."""
    return {
        "time_step": scene.time_step,
        "vehicles": [
            {"id": v.id, "s": round(v.s, 6), "v": round(v.v, 6), "lane": v.lane, "ego": v.is_ego}
            for v in sorted(scene.vehicles, key=lambda x: x.id)
        ],
    }
