from advdrive.learners.buffers import ReplayBuffer, RolloutBuffer, compute_gae, normalize_advantages
from advdrive.learners.ppo import (
    PpoConfig,
    PpoLearner,
    UpdateStats,
    categorical,
    ppo_clip_objective,
    ppo_policy_loss,
    ppo_update,
    sample_discrete,
)
from advdrive.learners.td3 import (
    Td3Config,
    Td3Learner,
    Td3Stats,
    project_discrete_action,
    smooth_target_action,
    td3_target,
    td3_update,
)

__all__ = [
    "PpoConfig",
    "PpoLearner",
    "ReplayBuffer",
    "RolloutBuffer",
    "Td3Config",
    "Td3Learner",
    "Td3Stats",
    "UpdateStats",
    "categorical",
    "compute_gae",
    "normalize_advantages",
    "ppo_clip_objective",
    "ppo_policy_loss",
    "ppo_update",
    "project_discrete_action",
    "sample_discrete",
    "smooth_target_action",
    "td3_target",
    "td3_update",
]
