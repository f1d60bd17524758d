"""Deterministic 2D urban driving: simulation, bird-view observations,
an imitation data pipeline, PID tracking and a safe-set QP safety filter.
"""

from .geometry import OrientedBox, Polyline, Pose2D, boxes_overlap, lateral_offset, to_global, to_local
from .trajectory import Trajectory
from .world import (
    Control,
    MapData,
    VehicleState,
    WorldConfig,
    WorldState,
    load_map,
    make_world,
    plan_route,
    step_vehicle,
    step_world,
)
from .birdview import RenderConfig, render, world_to_pixel
from .tracking import TrackerConfig, track
from .safety import HalfPlane, SafetyParams, qp_project, safe_control, safety_index, shaped_distance
from .expert_data import Dataset, ExpertPlanner, NoiseSchedule, collect, expert_plan
from .policy import ConstantVelocityPlanner, Planner, RemotePlanner, ToyPolicy, train_toy
from .evaluation import EpisodeLog, Scenario, run_episode, success_rate

__version__ = "0.1.0"

__all__ = [
    "Control",
    "ConstantVelocityPlanner",
    "Dataset",
    "EpisodeLog",
    "ExpertPlanner",
    "HalfPlane",
    "MapData",
    "NoiseSchedule",
    "OrientedBox",
    "Planner",
    "Polyline",
    "Pose2D",
    "RemotePlanner",
    "RenderConfig",
    "SafetyParams",
    "Scenario",
    "ToyPolicy",
    "TrackerConfig",
    "Trajectory",
    "VehicleState",
    "WorldConfig",
    "WorldState",
    "boxes_overlap",
    "collect",
    "expert_plan",
    "lateral_offset",
    "load_map",
    "make_world",
    "plan_route",
    "qp_project",
    "render",
    "run_episode",
    "safe_control",
    "safety_index",
    "shaped_distance",
    "step_vehicle",
    "step_world",
    "success_rate",
    "to_global",
    "to_local",
    "track",
    "train_toy",
    "world_to_pixel",
]
