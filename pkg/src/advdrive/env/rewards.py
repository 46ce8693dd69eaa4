"""Per-decision-step rewards for the ego vehicle and the adversarial vehicle."""
from __future__ import annotations

from dataclasses import dataclass

COLLISION_PENALTY = -1.0
HIGH_SPEED_REWARD = 0.5
RIGHT_LANE_REWARD = 0.3
MAX_SPEED_FRACTION = 0.95

ADV_ONLY_EGO = 1.0
ADV_BOTH = 0.5
ADV_ONLY_SELF = -1.0


@dataclass(frozen=True)
class RewardBreakdown:
    r_c: float = 0.0
    r_s: float = 0.0
    r_r: float = 0.0
    r_adv: float = 0.0
    total: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return {"r_c": self.r_c, "r_s": self.r_s, "r_r": self.r_r, "r_adv": self.r_adv, "total": self.total}


@dataclass(frozen=True)
class Transition:
    """What happened to one vehicle over a decision step."""

    collided: bool
    target_speed_increased: bool
    speed: float
    lane: int
    lane_count: int
    max_speed: float


def high_speed_reward(t: Transition) -> float:
    if t.target_speed_increased or t.speed >= MAX_SPEED_FRACTION * t.max_speed:
        return HIGH_SPEED_REWARD
    return 0.0


def right_lane_reward(t: Transition) -> float:
    return RIGHT_LANE_REWARD if t.lane == t.lane_count - 1 else 0.0


def compute_ego_reward(t: Transition) -> RewardBreakdown:
    r_c = COLLISION_PENALTY if t.collided else 0.0
    r_s = high_speed_reward(t)
    r_r = right_lane_reward(t)
    return RewardBreakdown(r_c=r_c, r_s=r_s, r_r=r_r, total=r_c + r_s + r_r)


def adversarial_reward(ego_collided: bool, adversary_collided: bool) -> float:
    if ego_collided and adversary_collided:
        return ADV_BOTH
    if ego_collided:
        return ADV_ONLY_EGO
    if adversary_collided:
        return ADV_ONLY_SELF
    return 0.0


def compute_adversarial_reward(ego_collided: bool, adversary_collided: bool,
                               shaping: Transition | None = None) -> RewardBreakdown:
    """Adversary reward from the two collision flags of one decision step.

    With ``shaping`` the adversary also earns the right-lane term for its own
    lane; by default the total is the collision table alone.
    """
    r_adv = adversarial_reward(ego_collided, adversary_collided)
    r_r = right_lane_reward(shaping) if shaping is not None else 0.0
    return RewardBreakdown(r_r=r_r, r_adv=r_adv, total=r_adv + r_r)
