"""Semantic scene model and the relational-grid state encoding.

The grid is centered on the ego vehicle. Rows are lanes relative to the ego lane
(row ``lateral`` is the ego lane, higher rows are further left). Columns are
vehicle ranks: ``behind`` columns for followers (nearest next to the center),
the center column, then ``ahead`` columns for leaders (nearest first).
On the ego row the center cell holds the ego; on other rows it holds a vehicle
driving alongside the ego (longitudinal extents overlapping), if any.

Layers per cell:

    0..3  vehicle features (ds, dv, dd, dphi); ego cell: (omega, v_ego, k, 0)
    4..5  lane features of the row (lane type code, distance to lane end)
    6     vehicle presence mask

``flatten`` orders values row-major, then column, then layer.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import EncoderConfig
from .sim import LaneSegment, LaneType, TrafficScene, Vehicle

N_VEHICLE_LAYERS = 4
N_LANE_LAYERS = 2
N_LAYERS = N_VEHICLE_LAYERS + N_LANE_LAYERS + 1
LANE_TYPE_LAYER = 4
LANE_END_LAYER = 5
MASK_LAYER = 6
OMEGA_LAYER = 0


@dataclass(frozen=True)
class VehicleScope:
    lateral: int = 2
    ahead: int = 2
    behind: int = 1

    def __post_init__(self):
        if self.lateral < 0 or self.ahead < 1 or self.behind < 0:
            raise ValueError("scope needs lateral >= 0, ahead >= 1, behind >= 0")

    @property
    def rows(self) -> int:
        return 2 * self.lateral + 1

    @property
    def cols(self) -> int:
        return self.behind + 1 + self.ahead

    @property
    def center(self) -> tuple[int, int]:
        return self.lateral, self.behind

    @classmethod
    def from_config(cls, cfg: EncoderConfig) -> "VehicleScope":
        return cls(cfg.lateral, cfg.ahead, cfg.behind)


def input_dim(scope: VehicleScope) -> int:
    return scope.rows * scope.cols * N_LAYERS


@dataclass(frozen=True)
class VehicleVehicle:
    other: int
    ds: float
    dv: float


@dataclass(frozen=True)
class VehicleLane:
    vehicle: int
    lane: int
    dd: float
    dphi: float


@dataclass(frozen=True)
class LaneLane:
    right: int
    left: int


@dataclass
class ERModel:
    """Entities visible to the ego plus their relations (ego-relative where applicable)."""

    ego: Vehicle
    vehicles: list[Vehicle]
    lanes: list[LaneSegment]
    vehicle_vehicle: dict[int, VehicleVehicle] = field(default_factory=dict)
    vehicle_lane: dict[int, VehicleLane] = field(default_factory=dict)
    lane_lane: list[LaneLane] = field(default_factory=list)

    def lane_at(self, index: int) -> LaneSegment | None:
        for seg in self.lanes:
            if seg.index == index:
                return seg
        return None


def build_er_model(scene: TrafficScene, sensor_range: float) -> ERModel:
    ego = scene.ego
    visible = [v for v in scene.vehicles if not v.is_ego and abs(v.s - ego.s) <= sensor_range]
    visible.sort(key=lambda v: v.id)
    lanes = sorted((seg for seg in scene.lanes if seg.contains(ego.s)), key=lambda seg: seg.index)
    er = ERModel(ego=ego, vehicles=[ego] + visible, lanes=lanes)
    for v in visible:
        er.vehicle_vehicle[v.id] = VehicleVehicle(v.id, v.s - ego.s, v.v - ego.v)
    for v in er.vehicles:
        er.vehicle_lane[v.id] = VehicleLane(v.id, v.lane, v.d, v.phi)
    indices = {seg.index for seg in lanes}
    er.lane_lane = [LaneLane(k, k + 1) for k in sorted(indices) if k + 1 in indices]
    return er


def _alongside(ego: Vehicle, v: Vehicle) -> bool:
    return abs(v.s - ego.s) < 0.5 * (v.length + ego.length)


def select_scope(er: ERModel, scope: VehicleScope) -> dict[tuple[int, int], Vehicle]:
    """Vehicles inside the scope, keyed by their grid cell (row, col).

    Per lane within ``lateral`` of the ego lane: the nearest ``ahead`` vehicles
    with ds > 0 and the nearest ``behind`` with ds <= 0. On neighbouring lanes a
    vehicle overlapping the ego longitudinally takes the center column first.
    Ties in ds are broken by vehicle id.
    """
    ego = er.ego
    cells: dict[tuple[int, int], Vehicle] = {}
    per_lane: dict[int, list[Vehicle]] = {}
    for v in er.vehicles:
        if v.is_ego:
            continue
        off = v.lane - ego.lane
        if abs(off) <= scope.lateral:
            per_lane.setdefault(off, []).append(v)
    for off, vs in per_lane.items():
        row = scope.lateral + off
        if off != 0:
            side = sorted((v for v in vs if _alongside(ego, v)), key=lambda v: (abs(v.s - ego.s), v.id))
            if side:
                cells[(row, scope.behind)] = side[0]
                vs = [v for v in vs if v is not side[0]]
        ahead = sorted((v for v in vs if v.s - ego.s > 0), key=lambda v: (v.s - ego.s, v.id))
        behind = sorted((v for v in vs if v.s - ego.s <= 0), key=lambda v: (ego.s - v.s, v.id))
        for rank, v in enumerate(ahead[: scope.ahead]):
            cells[(row, scope.behind + 1 + rank)] = v
        for rank, v in enumerate(behind[: scope.behind]):
            cells[(row, scope.behind - 1 - rank)] = v
    return cells


def behavior_adaptation(scene_or_speed, theta_v: float) -> float:
    """Desired minus actual ego speed."""
    v = scene_or_speed.ego.v if isinstance(scene_or_speed, TrafficScene) else float(scene_or_speed)
    return theta_v - v


@dataclass
class StateTensor:
    data: np.ndarray  # (rows, cols, N_LAYERS)
    scope: VehicleScope

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass(frozen=True)
class Normalization:
    ds: float
    dv: float
    dd: float
    dphi: float
    lane_end_cap: float
    lane_end: float
    lane_index: float
    sentinel: float
    clip: bool = True

    @classmethod
    def from_config(cls, cfg: EncoderConfig) -> "Normalization":
        return cls(
            ds=cfg.sensor_range,
            dv=cfg.v_norm,
            dd=cfg.half_lane_width,
            dphi=cfg.heading_norm,
            lane_end_cap=cfg.lane_end_cap,
            lane_end=cfg.lane_end_cap,
            lane_index=cfg.lane_index_norm,
            sentinel=cfg.sentinel,
        )

    @classmethod
    def identity(cls, lane_end_cap: float = 500.0, sentinel: float = -1e3) -> "Normalization":
        """No scaling or clipping; for inspecting raw feature values."""
        return cls(1.0, 1.0, 1.0, 1.0, lane_end_cap, 1.0, 1.0, sentinel, clip=False)

    def scale(self, value: float, denom: float) -> float:
        x = value / denom
        if self.clip:
            x = min(1.0, max(-1.0, x))
        return x


def encode(
    er: ERModel,
    cells: dict[tuple[int, int], Vehicle],
    scope: VehicleScope,
    theta_v: float,
    norm: Normalization,
) -> StateTensor:
    grid = np.full((scope.rows, scope.cols, N_LAYERS), norm.sentinel, dtype=np.float64)
    grid[:, :, MASK_LAYER] = 0.0
    ego = er.ego

    for row in range(scope.rows):
        seg = er.lane_at(ego.lane + row - scope.lateral)
        if seg is None:
            continue  # nonexistent lane keeps the sentinel in its lane layers
        grid[row, :, LANE_TYPE_LAYER] = 1.0 if seg.lane_type == LaneType.ACCELERATION else 0.0
        remaining = min(norm.lane_end_cap, max(0.0, seg.end_s - ego.s))
        grid[row, :, LANE_END_LAYER] = remaining / norm.lane_end

    for (row, col), v in cells.items():
        rel = er.vehicle_vehicle[v.id]
        lane_rel = er.vehicle_lane[v.id]
        grid[row, col, 0] = norm.scale(rel.ds, norm.ds)
        grid[row, col, 1] = norm.scale(rel.dv, norm.dv)
        grid[row, col, 2] = norm.scale(lane_rel.dd, norm.dd)
        grid[row, col, 3] = norm.scale(lane_rel.dphi, norm.dphi)
        grid[row, col, MASK_LAYER] = 1.0

    r, c = scope.center
    grid[r, c, 0] = norm.scale(behavior_adaptation(ego.v, theta_v), norm.dv)
    grid[r, c, 1] = norm.scale(ego.v, norm.dv)
    grid[r, c, 2] = norm.scale(float(ego.lane), norm.lane_index)
    grid[r, c, 3] = 0.0
    grid[r, c, MASK_LAYER] = 1.0
    return StateTensor(grid, scope)


def flatten(tensor: StateTensor) -> np.ndarray:
    return tensor.data.reshape(-1).copy()


def omega_index(scope: VehicleScope) -> int:
    """Position of the behavior adaptation value in the flattened vector."""
    r, c = scope.center
    return (r * scope.cols + c) * N_LAYERS + OMEGA_LAYER


class Encoder:
    """Scene -> flat network input, bound to one encoder configuration."""

    def __init__(self, cfg: EncoderConfig):
        self.cfg = cfg
        self.scope = VehicleScope.from_config(cfg)
        self.norm = Normalization.from_config(cfg)
        self.dim = input_dim(self.scope)

    def tensor(self, scene: TrafficScene, theta_v: float) -> StateTensor:
        er = build_er_model(scene, self.cfg.sensor_range)
        return encode(er, select_scope(er, self.scope), self.scope, theta_v, self.norm)

    def __call__(self, scene: TrafficScene, theta_v: float) -> np.ndarray:
        return flatten(self.tensor(scene, theta_v))
