"""Rule-based drivers: IDM car following and MOBIL lane changing."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from advdrive.errors import DegenerateGapError
from advdrive.sim import kernels as K
from advdrive.sim.core import DEFAULT_GAINS, ControlGains, WorldState

DIRECTIONS = {-1: "left", 0: "keep", 1: "right"}


@dataclass(frozen=True)
class DriverParams:
    v0: float = 25.0  # desired speed, m/s
    T: float = 1.5  # desired time gap, s
    d0: float = 10.0  # jam distance, m
    a: float = 3.0  # max acceleration, m/s^2
    b: float = 5.0  # comfortable deceleration, m/s^2
    delta: float = 4.0  # velocity exponent
    politeness: float = 0.3
    lane_change_threshold: float = 0.2  # m/s^2
    b_safe: float = 4.0  # max braking imposed on the new follower, m/s^2

    def __post_init__(self):
        for name in ("v0", "T", "d0", "a", "b", "b_safe"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0, got {getattr(self, name)}")
        if self.delta < 1:
            raise ValueError(f"delta must be >= 1, got {self.delta}")
        if not 0 <= self.politeness <= 1:
            raise ValueError(f"politeness must lie in [0, 1], got {self.politeness}")
        if self.lane_change_threshold < 0:
            raise ValueError(f"lane_change_threshold must be >= 0, got {self.lane_change_threshold}")

    def as_array(self) -> np.ndarray:
        out = np.empty(K.N_IDM)
        out[K.I_T] = self.T
        out[K.I_D0] = self.d0
        out[K.I_A] = self.a
        out[K.I_B] = self.b
        out[K.I_DELTA] = self.delta
        out[K.I_POLITE] = self.politeness
        out[K.I_ATH] = self.lane_change_threshold
        out[K.I_BSAFE] = self.b_safe
        return out


@dataclass(frozen=True)
class LaneChangeDecision:
    direction: str  # "keep", "left" or "right"
    incentive_value: float
    safe: bool

    @property
    def offset(self) -> int:
        return {"left": -1, "keep": 0, "right": 1}[self.direction]


@dataclass(frozen=True)
class MobilView:
    """Accelerations before (``a_*``) and after (``a_*_new``) a hypothetical lane change.

    c is the deciding vehicle, n its new follower, o its old follower.
    """

    a_c: float
    a_c_new: float
    a_n: float
    a_n_new: float
    a_o: float
    a_o_new: float


def desired_gap(v: float, dv: float, params: DriverParams) -> float:
    """IDM desired gap, never below the jam distance."""
    if v < 0:
        raise ValueError(f"v must be >= 0, got {v}")
    return float(K.desired_gap(v, dv, params.T, params.d0, params.a, params.b))


def idm_acceleration(v: float, leader: tuple[float, float] | None, params: DriverParams,
                     gains: ControlGains = DEFAULT_GAINS) -> float:
    """IDM acceleration for speed ``v`` behind ``leader = (gap, closing_speed)``.

    Without a leader only the free-road term applies. The result is clamped to
    the actuator range of ``gains``.
    """
    if v < 0:
        raise ValueError(f"v must be >= 0, got {v}")
    if leader is None:
        return float(K.idm_accel(v, params.v0, False, 0.0, 0.0, params.as_array(), gains.a_max, gains.b_max))
    gap, dv = leader
    if not gap > 0:
        raise DegenerateGapError(f"leader gap must be > 0, got {gap}; treat the pair as colliding")
    return float(K.idm_accel(v, params.v0, True, gap, dv, params.as_array(), gains.a_max, gains.b_max))


def mobil_side(view: MobilView, params: DriverParams) -> tuple[bool, float, bool]:
    """``(safe, incentive, accepted)`` for one candidate lane."""
    safe, incentive, accepted = K.mobil_criterion(
        view.a_c, view.a_c_new, view.a_n, view.a_n_new, view.a_o, view.a_o_new,
        params.politeness, params.lane_change_threshold, params.b_safe,
    )
    return bool(safe), float(incentive), bool(accepted)


def mobil_decide(views: dict[str, MobilView], params: DriverParams) -> LaneChangeDecision:
    """Pick a lane from the candidate ``views`` (keys ``"left"``/``"right"``).

    A side qualifies when it is safe and its incentive reaches the threshold.
    The larger incentive wins and ties go left. With no qualifying side the
    decision is ``keep`` carrying the best candidate's incentive and safety.
    """
    unknown = set(views) - {"left", "right"}
    if unknown:
        raise ValueError(f"unknown sides {sorted(unknown)}")
    best = None
    seen = (False, -math.inf)
    for side in ("left", "right"):
        if side not in views:
            continue
        safe, incentive, accepted = mobil_side(views[side], params)
        if incentive > seen[1]:
            seen = (safe, incentive)
        if accepted and (best is None or incentive > best.incentive_value):
            best = LaneChangeDecision(side, incentive, safe)
    if best is None:
        return LaneChangeDecision("keep", seen[1], seen[0])
    return best


def rule_agent_act(world: WorldState, vehicle_id: int, params: DriverParams,
                   gains: ControlGains = DEFAULT_GAINS, cooldown_steps: int = 2):
    """IDM acceleration and MOBIL decision for one rule-driven vehicle at a decision tick.

    Uses the vehicle's own desired speed from ``world.v0``. An accepted change
    updates ``target_lane`` and locks further changes for ``cooldown_steps`` ticks.
    """
    i = world.index_of(vehicle_id)
    idm = params.as_array()
    lanes = world.lanes()
    v0 = np.where(world.rule_driven, world.v0, world.target_speed)
    lead = K.leader_of(world.s, lanes, i, world.s[i], lanes[i])
    accel = float(K.accel_behind(i, lead, world.s, world.speed, world.length, v0, idm, gains.a_max, gains.b_max))

    if world.crashed[i]:
        return 0.0, LaneChangeDecision("keep", -math.inf, False)
    if world.cooldown[i] > 0:
        world.cooldown[i] -= 1
        return accel, LaneChangeDecision("keep", -math.inf, False)
    if world.target_lane[i] != lanes[i]:
        return accel, LaneChangeDecision("keep", -math.inf, False)

    d, incentive, safe = K.lane_change_choice(i, world.s, world.speed, world.length, v0, lanes,
                                              world.geometry.lane_count, idm, gains.a_max, gains.b_max)
    decision = LaneChangeDecision(DIRECTIONS[int(d)], float(incentive), bool(safe))
    if d != 0:
        world.target_lane[i] += d
        world.cooldown[i] = cooldown_steps
    return accel, decision


def simulate_traffic(world: WorldState, params: DriverParams, seconds: float, gains: ControlGains = DEFAULT_GAINS,
                     substeps: int = 15, cooldown_steps: int = 2) -> set[int]:
    """Advance ``world`` in place by whole 1 s decision steps; returns ids of vehicles that crashed.

    Rule-driven vehicles follow IDM/MOBIL; the rest track their lane and speed targets.
    """
    hit = np.zeros(len(world), dtype=np.bool_)
    dt = 1.0 / substeps
    g = world.geometry
    idm, ctrl = params.as_array(), gains.as_array()
    for _ in range(int(round(seconds))):
        K.advance(world.s, world.y, world.heading, world.speed, world.length, world.width, world.target_lane,
                  world.target_speed, world.v0, world.rule_driven, world.crashed, world.cooldown, hit,
                  g.lane_width, g.lane_count, dt, substeps, cooldown_steps, idm, ctrl)
        world.time += 1.0
    return {int(world.ids[i]) for i in np.flatnonzero(hit)}
