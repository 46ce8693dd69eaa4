"""Highway episode environment with kinematic observations and discrete meta-actions."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from advdrive.behavior import DriverParams
from advdrive.env.rewards import RewardBreakdown, Transition, compute_adversarial_reward, compute_ego_reward
from advdrive.errors import ConfigError, ProtocolError
from advdrive.sim import kernels as K
from advdrive.sim.core import DEFAULT_GAINS, VEHICLE_LENGTH, VEHICLE_WIDTH, ControlGains, RoadGeometry, WorldState

OBS_ROWS = 5
OBS_FEATURES = 5
OBS_SIZE = OBS_ROWS * OBS_FEATURES
N_ACTIONS = 5
X_RANGE = 100.0  # m
V_RANGE = 40.0  # m/s

EGO_ID = 0


class MetaAction(enum.IntEnum):
    LANE_LEFT = 0
    IDLE = 1
    LANE_RIGHT = 2
    FASTER = 3
    SLOWER = 4


@dataclass(frozen=True)
class EpisodeConfig:
    lane_count: int = 4
    lane_width: float = 4.0
    road_length: float = 10_000.0
    min_speed: float = 20.0
    max_speed: float = 30.0
    speed_step: float = 5.0
    ego_speed: float = 25.0
    rule_vehicle_count: int = 20
    adversary_count: int = 1
    # "agent": adversaries take actions from a policy; "rule": they drive by IDM/MOBIL
    adversary_control: str = "rule"
    adversary_shaping: bool = False
    episode_duration: float = 40.0
    policy_frequency: float = 1.0
    simulation_frequency: int = 15
    v0_min: float = 23.0
    v0_max: float = 28.0
    lane_change_cooldown: int = 2
    spawn_spacing: float = 25.0
    spawn_behind: float = 100.0
    spawn_ahead: float = 400.0
    adversary_spawn_behind: float = 30.0
    adversary_spawn_ahead: float = 50.0
    seed: int = 0

    def __post_init__(self):
        if not self.episode_duration > 0:
            raise ConfigError(f"episode_duration must be > 0, got {self.episode_duration}")
        if not self.policy_frequency > 0:
            raise ConfigError(f"policy_frequency must be > 0, got {self.policy_frequency}")
        if self.simulation_frequency < 1:
            raise ConfigError(f"simulation_frequency must be >= 1, got {self.simulation_frequency}")
        ratio = self.simulation_frequency / self.policy_frequency
        if ratio < 1 or abs(ratio - round(ratio)) > 1e-9:
            raise ConfigError("simulation_frequency must be an integer multiple of policy_frequency")
        if self.adversary_control not in ("agent", "rule"):
            raise ConfigError(f"adversary_control must be 'agent' or 'rule', got {self.adversary_control!r}")
        if self.rule_vehicle_count < 0 or self.adversary_count < 0:
            raise ConfigError("vehicle counts must be >= 0")
        if not self.min_speed <= self.ego_speed <= self.max_speed:
            raise ConfigError(f"ego_speed must lie in [min_speed, max_speed], got {self.ego_speed}")
        if not self.v0_min <= self.v0_max:
            raise ConfigError("v0_min must be <= v0_max")
        if not self.speed_step > 0:
            raise ConfigError(f"speed_step must be > 0, got {self.speed_step}")
        if self.lane_change_cooldown < 0:
            raise ConfigError(f"lane_change_cooldown must be >= 0, got {self.lane_change_cooldown}")
        if not self.spawn_spacing > 0:
            raise ConfigError(f"spawn_spacing must be > 0, got {self.spawn_spacing}")
        try:
            self.geometry()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def geometry(self) -> RoadGeometry:
        return RoadGeometry(self.lane_count, self.lane_width, self.road_length, self.min_speed, self.max_speed)

    @property
    def controlled_agents(self) -> list[tuple[int, str]]:
        agents = [(EGO_ID, "ego")]
        if self.adversary_control == "agent":
            agents += [(EGO_ID + 1 + k, "adversary") for k in range(self.adversary_count)]
        return agents

    @property
    def substeps(self) -> int:
        return int(round(self.simulation_frequency / self.policy_frequency))

    @property
    def max_decision_steps(self) -> int:
        return math.ceil(self.episode_duration * self.policy_frequency)


@dataclass(frozen=True)
class AgentStep:
    observation: np.ndarray
    reward: RewardBreakdown
    done: bool
    info: dict = field(default_factory=dict)


def _place(rng, taken, lane_count, lo, hi, spacing, attempts=1000):
    for _ in range(attempts):
        lane = int(rng.integers(lane_count))
        s = float(rng.uniform(lo, hi))
        if all(abs(s - other) >= spacing for other in taken[lane]):
            taken[lane].append(s)
            return lane, s
    raise ConfigError(
        f"cannot place vehicle without overlap in [{lo:.0f}, {hi:.0f}] m with {spacing} m spacing; "
        "reduce rule_vehicle_count or widen the spawn window"
    )


def env_reset(config: EpisodeConfig, driver: DriverParams = DriverParams(),
              seed: int | None = None) -> WorldState:
    """Spawn the ego, the adversary slots and rule traffic from a seeded generator.

    The ego starts at ``spawn_behind + 100`` m; adversaries within their own
    window around it; rule vehicles anywhere in the main window. Vehicles in
    one lane are at least ``spawn_spacing`` apart (centre to centre).
    """
    geometry = config.geometry()
    rng = np.random.default_rng(config.seed if seed is None else seed)
    capacity = geometry.lane_count * (int((config.spawn_ahead + config.spawn_behind) // config.spawn_spacing) + 1)
    total = 1 + config.adversary_count + config.rule_vehicle_count
    if total > capacity:
        raise ConfigError(f"{total} vehicles cannot fit {capacity} spawn slots")

    taken = [[] for _ in range(geometry.lane_count)]
    ego_s = config.spawn_behind + 100.0
    ego_lane = int(rng.integers(geometry.lane_count))
    taken[ego_lane].append(ego_s)
    n = total
    ids = np.arange(n, dtype=np.int64)
    role = np.full(n, K.ROLE_RULE, dtype=np.int64)
    s = np.empty(n)
    lane = np.empty(n, dtype=np.int64)
    speed = np.empty(n)
    target_speed = np.empty(n)
    v0 = np.empty(n)
    rule_driven = np.ones(n, dtype=np.bool_)

    role[0] = K.ROLE_EGO
    s[0], lane[0] = ego_s, ego_lane
    speed[0] = target_speed[0] = v0[0] = config.ego_speed
    rule_driven[0] = False
    for k in range(1, 1 + config.adversary_count):
        lane[k], s[k] = _place(rng, taken, geometry.lane_count, ego_s - config.adversary_spawn_behind,
                               ego_s + config.adversary_spawn_ahead, config.spawn_spacing)
        role[k] = K.ROLE_ADVERSARY
        rule_driven[k] = config.adversary_control == "rule"
        v0[k] = float(rng.uniform(config.v0_min, config.v0_max))
        if rule_driven[k]:
            speed[k] = target_speed[k] = v0[k]
        else:
            speed[k] = target_speed[k] = config.ego_speed
    for k in range(1 + config.adversary_count, n):
        lane[k], s[k] = _place(rng, taken, geometry.lane_count, ego_s - config.spawn_behind,
                               ego_s + config.spawn_ahead, config.spawn_spacing)
        v0[k] = float(rng.uniform(config.v0_min, config.v0_max))
        speed[k] = target_speed[k] = v0[k]

    return WorldState(
        geometry=geometry, ids=ids, role=role, s=s, y=lane * geometry.lane_width, heading=np.zeros(n),
        speed=speed, target_lane=lane.copy(), target_speed=target_speed,
        length=np.full(n, VEHICLE_LENGTH), width=np.full(n, VEHICLE_WIDTH), crashed=np.zeros(n, dtype=np.bool_),
        v0=v0, rule_driven=rule_driven, cooldown=np.zeros(n, dtype=np.int64), time=0.0, rng=rng,
    )


def observe(world: WorldState, agent_id: int) -> np.ndarray:
    """5x5 kinematic observation: presence, x, y, vx, vy for self then the four nearest vehicles.

    Neighbour rows are relative to the agent; the self row carries absolute
    velocity. Positions scale by 100 m laterally by the road width, speeds by
    40 m/s, and everything is clipped to [-1, 1].
    """
    i = world.index_of(agent_id)
    g = world.geometry
    out = np.zeros((OBS_ROWS, OBS_FEATURES))
    K.observe_into(i, world.s, world.y, world.heading, world.speed, X_RANGE, g.lane_count * g.lane_width,
                   V_RANGE, out)
    return out


def apply_meta_action(world: WorldState, agent_id: int, action: int, speed_step: float = 5.0) -> MetaAction:
    """Shift the agent's lane/speed targets; returns the action actually applied.

    An action that would leave the valid lane or speed range is replaced by IDLE.
    """
    action = MetaAction(int(action))
    i = world.index_of(agent_id)
    g = world.geometry
    if action in (MetaAction.LANE_LEFT, MetaAction.LANE_RIGHT):
        lane = world.target_lane[i] + (-1 if action == MetaAction.LANE_LEFT else 1)
        if 0 <= lane < g.lane_count:
            world.target_lane[i] = lane
            return action
        return MetaAction.IDLE
    if action in (MetaAction.FASTER, MetaAction.SLOWER):
        target = world.target_speed[i] + (speed_step if action == MetaAction.FASTER else -speed_step)
        eps = 1e-9 * g.max_speed
        if g.min_speed - eps <= target <= g.max_speed + eps:
            world.target_speed[i] = min(max(target, g.min_speed), g.max_speed)
            return action
        return MetaAction.IDLE
    return MetaAction.IDLE


class HighwayEnv:
    """Episode driver around a :class:`WorldState`.

    Controlled agents are the ego plus, when ``adversary_control == "agent"``,
    the adversary slots. The episode ends when the ego crashes or time runs
    out; an adversary that crashes is done on its own and remains on the road
    as a stopped obstacle.
    """

    def __init__(self, config: EpisodeConfig = EpisodeConfig(), driver: DriverParams = DriverParams(),
                 gains: ControlGains = DEFAULT_GAINS):
        self.config = config
        self.driver = driver
        self.gains = gains
        self._idm = driver.as_array()
        self._ctrl = gains.as_array()
        self._dt = 1.0 / config.simulation_frequency
        self.world: WorldState | None = None
        self.steps = 0
        self.over = True
        self._done: dict[int, bool] = {}
        self.trace: list[dict] | None = None

    @property
    def agent_ids(self) -> list[int]:
        """Controlled agents that still expect an action."""
        return [a for a, d in self._done.items() if not d]

    def record_trace(self, enabled: bool = True):
        self.trace = [] if enabled else None

    def reset(self, seed: int | None = None) -> dict[int, np.ndarray]:
        self.world = env_reset(self.config, self.driver, seed)
        self.steps = 0
        self.over = False
        self._done = {a: False for a, _ in self.config.controlled_agents}
        if self.trace is not None:
            self.trace = []
        return {a: observe(self.world, a) for a in self._done}

    def observe(self, agent_id: int) -> np.ndarray:
        return observe(self.world, agent_id)

    def step(self, actions: dict[int, int]) -> dict[int, AgentStep]:
        if self.world is None or self.over:
            raise ProtocolError("episode is over; call reset()")
        active = self.agent_ids
        for a in actions:
            if a not in self._done:
                raise ProtocolError(f"agent {a} is not controlled in this episode")
            if self._done[a]:
                raise ProtocolError(f"agent {a} is done and cannot act")
        missing = [a for a in active if a not in actions]
        if missing:
            raise ProtocolError(f"missing actions for agents {missing}")

        w = self.world
        cfg = self.config
        crashed_before = w.crashed.copy()
        applied = {}
        faster = {}
        for a in active:
            act = apply_meta_action(w, a, actions[a], cfg.speed_step)
            applied[a] = act
            faster[a] = act == MetaAction.FASTER

        hit = np.zeros(len(w), dtype=np.bool_)
        K.advance(w.s, w.y, w.heading, w.speed, w.length, w.width, w.target_lane, w.target_speed, w.v0,
                  w.rule_driven, w.crashed, w.cooldown, hit, w.geometry.lane_width, w.geometry.lane_count,
                  self._dt, cfg.substeps, cfg.lane_change_cooldown, self._idm, self._ctrl)
        self.steps += 1
        w.time = self.steps / cfg.policy_frequency
        newly = w.crashed & ~crashed_before

        ego = w.index_of(EGO_ID)
        ego_hit = bool(newly[ego])
        adv_slots = np.flatnonzero(w.role == K.ROLE_ADVERSARY)
        adv_hit = bool(newly[adv_slots].any()) if adv_slots.size else False
        self.over = ego_hit or bool(w.crashed[ego]) or w.time >= cfg.episode_duration

        out = {}
        g = w.geometry
        for a in active:
            i = w.index_of(a)
            t = Transition(
                collided=bool(newly[i]), target_speed_increased=faster[a], speed=float(w.speed[i]),
                lane=g.lane_of(float(w.y[i])), lane_count=g.lane_count, max_speed=g.max_speed,
            )
            if a == EGO_ID:
                reward = compute_ego_reward(t)
            else:
                reward = compute_adversarial_reward(ego_hit, t.collided, t if cfg.adversary_shaping else None)
            done = self.over or bool(w.crashed[i])
            self._done[a] = done
            info = {
                "applied_action": int(applied[a]),
                "collided": t.collided,
                "ego_collided": ego_hit,
                "adversary_collided": adv_hit if a == EGO_ID else t.collided,
            }
            out[a] = AgentStep(observe(w, a), reward, done, info)
        if self.over:
            for a in self._done:
                self._done[a] = True

        if self.trace is not None:
            self.trace.append(self._trace_record(actions, applied, out))
        return out

    def _trace_record(self, actions, applied, out) -> dict:
        w = self.world
        lanes = w.lanes()
        roles = ("ego", "adversary", "rule")
        vehicles = [
            {
                "id": int(w.ids[i]), "role": roles[w.role[i]], "s": float(w.s[i]), "y": float(w.y[i]),
                "heading": float(w.heading[i]), "speed": float(w.speed[i]), "lane": int(lanes[i]),
                "target_lane": int(w.target_lane[i]), "target_speed": float(w.target_speed[i]),
                "crashed": bool(w.crashed[i]),
            }
            for i in range(len(w))
        ]
        return {
            "step": self.steps,
            "time": w.time,
            "vehicles": vehicles,
            "actions": {str(a): {"requested": int(actions[a]), "applied": int(applied[a])} for a in applied},
            "rewards": {str(a): out[a].reward.as_dict() for a in out},
            "done": {str(a): out[a].done for a in out},
        }
