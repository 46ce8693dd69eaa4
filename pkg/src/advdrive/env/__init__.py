from advdrive.env.highway import (
    EGO_ID,
    N_ACTIONS,
    OBS_SIZE,
    AgentStep,
    EpisodeConfig,
    HighwayEnv,
    MetaAction,
    apply_meta_action,
    env_reset,
    observe,
)
from advdrive.env.rewards import RewardBreakdown, Transition, compute_adversarial_reward, compute_ego_reward

__all__ = [
    "EGO_ID",
    "N_ACTIONS",
    "OBS_SIZE",
    "AgentStep",
    "EpisodeConfig",
    "HighwayEnv",
    "MetaAction",
    "RewardBreakdown",
    "Transition",
    "apply_meta_action",
    "compute_adversarial_reward",
    "compute_ego_reward",
    "env_reset",
    "observe",
]
