from advdrive.sim.core import (
    DEFAULT_GAINS,
    PHYSICS_DT,
    ControlGains,
    Neighbor,
    NeighborSet,
    RoadGeometry,
    VehicleState,
    WorldState,
    closed_loop_control,
    detect_collisions,
    find_neighbors,
    step_kinematics,
)

__all__ = [
    "DEFAULT_GAINS",
    "PHYSICS_DT",
    "ControlGains",
    "Neighbor",
    "NeighborSet",
    "RoadGeometry",
    "VehicleState",
    "WorldState",
    "closed_loop_control",
    "detect_collisions",
    "find_neighbors",
    "step_kinematics",
]
