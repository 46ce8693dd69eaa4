"""Multi-lane straight-road world: vehicle state, kinematics, control, neighbours, collisions."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from advdrive.errors import NumericInputError
from advdrive.sim import kernels as K

ROLES = ("ego", "adversary", "rule")
ROLE_CODES = {"ego": K.ROLE_EGO, "adversary": K.ROLE_ADVERSARY, "rule": K.ROLE_RULE}

VEHICLE_LENGTH = 5.0
VEHICLE_WIDTH = 2.0
PHYSICS_DT = 1.0 / 15.0


@dataclass(frozen=True)
class ControlGains:
    """Low-level controller gains and actuator limits."""

    kv: float = 1.0  # speed error -> acceleration, 1/s
    ky: float = 0.3  # lateral error -> heading command, rad/m
    kh: float = 2.0  # heading error -> steering
    steer_max: float = 0.3  # rad
    heading_max: float = math.pi / 4
    a_max: float = 5.0  # m/s^2
    b_max: float = 8.0  # m/s^2

    def as_array(self) -> np.ndarray:
        out = np.empty(K.N_CTRL)
        out[K.C_KV] = self.kv
        out[K.C_KY] = self.ky
        out[K.C_KH] = self.kh
        out[K.C_STEER_MAX] = self.steer_max
        out[K.C_HEADING_MAX] = self.heading_max
        out[K.C_A_MAX] = self.a_max
        out[K.C_B_MAX] = self.b_max
        return out


DEFAULT_GAINS = ControlGains()


@dataclass(frozen=True)
class RoadGeometry:
    lane_count: int = 4
    lane_width: float = 4.0
    road_length: float = 10_000.0
    min_speed: float = 20.0
    max_speed: float = 30.0

    def __post_init__(self):
        if self.lane_count < 2:
            raise ValueError(f"lane_count must be >= 2, got {self.lane_count}")
        if not self.lane_width > 0:
            raise ValueError(f"lane_width must be > 0, got {self.lane_width}")
        if not self.min_speed < self.max_speed:
            raise ValueError(f"min_speed ({self.min_speed}) must be < max_speed ({self.max_speed})")

    def lane_center(self, lane: int) -> float:
        return lane * self.lane_width

    def lane_of(self, y: float) -> int:
        return K.lane_index(y, self.lane_width, self.lane_count)

    @property
    def rightmost_lane(self) -> int:
        return self.lane_count - 1


@dataclass(frozen=True)
class VehicleState:
    """One vehicle. ``y`` is lateral position with 0 at the centre of lane 0; larger y is further right."""

    id: int
    role: str
    s: float
    y: float
    heading: float
    speed: float
    target_lane: int
    target_speed: float
    length: float = VEHICLE_LENGTH
    width: float = VEHICLE_WIDTH
    crashed: bool = False

    def __post_init__(self):
        if self.role not in ROLE_CODES:
            raise ValueError(f"unknown role {self.role!r}")
        if self.speed < 0:
            raise ValueError(f"speed must be >= 0, got {self.speed}")


@dataclass(frozen=True)
class Neighbor:
    id: int
    gap: float
    closing_speed: float


@dataclass(frozen=True)
class NeighborSet:
    lane: int
    leader: Neighbor | None
    follower: Neighbor | None


def _check_finite(**values):
    for name, value in values.items():
        if not math.isfinite(value):
            raise NumericInputError(f"{name} must be finite, got {value!r}")


def step_kinematics(vehicle: VehicleState, accel: float, steer: float, dt: float,
                    gains: ControlGains = DEFAULT_GAINS) -> VehicleState:
    """Kinematic bicycle update (wheelbase = vehicle length); positions advance along the mid-step heading."""
    _check_finite(accel=accel, steer=steer, dt=dt, s=vehicle.s, y=vehicle.y,
                  heading=vehicle.heading, speed=vehicle.speed)
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    if abs(steer) > gains.steer_max:
        raise ValueError(f"|steer| must be <= {gains.steer_max}, got {steer}")
    if not -gains.b_max <= accel <= gains.a_max:
        raise ValueError(f"accel must lie in [{-gains.b_max}, {gains.a_max}], got {accel}")
    s, y, heading, speed = K.bicycle_step(vehicle.s, vehicle.y, vehicle.heading, vehicle.speed,
                                          accel, steer, vehicle.length, dt)
    return replace(vehicle, s=s, y=y, heading=heading, speed=speed)


def closed_loop_control(vehicle: VehicleState, geometry: RoadGeometry,
                        gains: ControlGains = DEFAULT_GAINS) -> tuple[float, float]:
    """Proportional speed and cascaded lateral/heading control toward the vehicle's targets."""
    ctrl = gains.as_array()
    accel = K.speed_control(vehicle.speed, vehicle.target_speed, ctrl)
    steer = K.lateral_control(vehicle.y, vehicle.heading, vehicle.target_lane, geometry.lane_width, ctrl)
    return float(accel), float(steer)


@dataclass
class WorldState:
    """Struct-of-arrays world. Slot order is the vehicle order; ids are unique labels.

    ``v0`` is the desired speed used by rule-driven vehicles and ``rule_driven``
    marks which vehicles follow IDM/MOBIL rather than their speed targets.
    """

    geometry: RoadGeometry
    ids: np.ndarray
    role: np.ndarray
    s: np.ndarray
    y: np.ndarray
    heading: np.ndarray
    speed: np.ndarray
    target_lane: np.ndarray
    target_speed: np.ndarray
    length: np.ndarray
    width: np.ndarray
    crashed: np.ndarray
    v0: np.ndarray
    rule_driven: np.ndarray
    cooldown: np.ndarray
    time: float = 0.0
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))

    _ARRAYS = ("ids", "role", "s", "y", "heading", "speed", "target_lane", "target_speed",
               "length", "width", "crashed", "v0", "rule_driven", "cooldown")

    @classmethod
    def from_vehicles(cls, vehicles, geometry: RoadGeometry, *, v0=None, rule_driven=None,
                      time: float = 0.0, rng: np.random.Generator | None = None) -> "WorldState":
        vehicles = list(vehicles)
        ids = [v.id for v in vehicles]
        if len(set(ids)) != len(ids):
            raise ValueError("vehicle ids must be unique")
        for v in vehicles:
            if not 0 <= v.target_lane < geometry.lane_count:
                raise ValueError(f"vehicle {v.id}: target_lane {v.target_lane} out of range")
        n = len(vehicles)
        if rule_driven is None:
            rule_driven = [v.role == "rule" for v in vehicles]
        if v0 is None:
            v0 = [v.target_speed for v in vehicles]
        return cls(
            geometry=geometry,
            ids=np.array(ids, dtype=np.int64).reshape(n),
            role=np.array([ROLE_CODES[v.role] for v in vehicles], dtype=np.int64).reshape(n),
            s=np.array([v.s for v in vehicles], dtype=np.float64).reshape(n),
            y=np.array([v.y for v in vehicles], dtype=np.float64).reshape(n),
            heading=np.array([v.heading for v in vehicles], dtype=np.float64).reshape(n),
            speed=np.array([v.speed for v in vehicles], dtype=np.float64).reshape(n),
            target_lane=np.array([v.target_lane for v in vehicles], dtype=np.int64).reshape(n),
            target_speed=np.array([v.target_speed for v in vehicles], dtype=np.float64).reshape(n),
            length=np.array([v.length for v in vehicles], dtype=np.float64).reshape(n),
            width=np.array([v.width for v in vehicles], dtype=np.float64).reshape(n),
            crashed=np.array([v.crashed for v in vehicles], dtype=np.bool_).reshape(n),
            v0=np.asarray(v0, dtype=np.float64).reshape(n),
            rule_driven=np.asarray(rule_driven, dtype=np.bool_).reshape(n),
            cooldown=np.zeros(n, dtype=np.int64),
            time=time,
            rng=rng if rng is not None else np.random.default_rng(0),
        )

    def __len__(self):
        return self.ids.shape[0]

    def index_of(self, vehicle_id: int) -> int:
        hits = np.flatnonzero(self.ids == vehicle_id)
        if hits.size == 0:
            raise KeyError(f"unknown vehicle id {vehicle_id}")
        return int(hits[0])

    def vehicle(self, vehicle_id: int) -> VehicleState:
        i = self.index_of(vehicle_id)
        return VehicleState(
            id=int(self.ids[i]), role=ROLES[self.role[i]], s=float(self.s[i]), y=float(self.y[i]),
            heading=float(self.heading[i]), speed=float(self.speed[i]),
            target_lane=int(self.target_lane[i]), target_speed=float(self.target_speed[i]),
            length=float(self.length[i]), width=float(self.width[i]), crashed=bool(self.crashed[i]),
        )

    @property
    def vehicles(self) -> list[VehicleState]:
        return [self.vehicle(int(i)) for i in self.ids]

    def lanes(self) -> np.ndarray:
        out = np.empty(len(self), dtype=np.int64)
        K.update_lanes(self.y, out, self.geometry.lane_width, self.geometry.lane_count)
        return out

    def lane_of(self, vehicle_id: int) -> int:
        return self.geometry.lane_of(float(self.y[self.index_of(vehicle_id)]))

    def copy(self) -> "WorldState":
        arrays = {name: getattr(self, name).copy() for name in self._ARRAYS}
        rng = np.random.default_rng()
        rng.bit_generator.state = self.rng.bit_generator.state
        return WorldState(geometry=self.geometry, time=self.time, rng=rng, **arrays)

    def fingerprint(self) -> bytes:
        """Raw bytes of every state array; equal fingerprints mean bit-identical worlds."""
        return b"".join(getattr(self, name).tobytes() for name in self._ARRAYS) + repr(self.time).encode()


def find_neighbors(world: WorldState, vehicle_id: int, lane: int) -> NeighborSet:
    """Nearest leader and follower of ``vehicle_id`` among vehicles currently in ``lane``."""
    i = world.index_of(vehicle_id)
    if not 0 <= lane < world.geometry.lane_count:
        raise ValueError(f"lane {lane} out of range")
    lanes = world.lanes()
    s, speed, length = world.s, world.speed, world.length

    lead = K.leader_of(s, lanes, i, s[i], lane)
    leader = None
    if lead != K.NO_VEHICLE:
        gap = max(0.0, K.raw_gap(s[lead], length[lead], s[i], length[i]))
        leader = Neighbor(int(world.ids[lead]), float(gap), float(speed[i] - speed[lead]))
    foll = K.follower_of(s, lanes, i, s[i], lane)
    follower = None
    if foll != K.NO_VEHICLE:
        gap = max(0.0, K.raw_gap(s[i], length[i], s[foll], length[foll]))
        follower = Neighbor(int(world.ids[foll]), float(gap), float(speed[foll] - speed[i]))
    return NeighborSet(lane=lane, leader=leader, follower=follower)


def detect_collisions(world: WorldState) -> set[tuple[int, int]]:
    """Pairs of ids whose footprints overlap; marks every member crashed and stops it."""
    pairs = K.collision_pairs(world.s, world.y, world.heading, world.length, world.width)
    out = set()
    for i, j in pairs:
        world.crashed[i] = world.crashed[j] = True
        world.speed[i] = world.speed[j] = 0.0
        a, b = int(world.ids[i]), int(world.ids[j])
        out.add((min(a, b), max(a, b)))
    return out
