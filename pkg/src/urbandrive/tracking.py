"""Decoupled longitudinal/lateral PID tracking of a planned trajectory.

The planner hands over H future waypoints in the ego frame; the tracker
picks the m-th waypoint, regulates speed toward the spacing of waypoints
m and m+1, and steers on the signed heading error toward waypoint m.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .trajectory import Trajectory
from .world import Control


class DegenerateTarget(Exception):
    """The target waypoint is too close to the ego origin to define a heading."""


@dataclass
class PidState:
    """One PID channel with anti-windup clamping and optional output limits."""

    kp: float
    ki: float = 0.0
    kd: float = 0.0
    integral_limit: float = 2.0
    output_limit: float | None = None
    integral: float = 0.0
    prev_error: float | None = None

    def reset(self) -> None:
        self.integral = 0.0
        self.prev_error = None

    def step(self, error: float, dt: float) -> float:
        self.integral = min(
            max(self.integral + error * dt, -self.integral_limit), self.integral_limit
        )
        derivative = 0.0 if self.prev_error is None else (error - self.prev_error) / dt
        self.prev_error = error
        out = self.kp * error + self.ki * self.integral + self.kd * derivative
        if self.output_limit is not None:
            out = min(max(out, -self.output_limit), self.output_limit)
        return out


@dataclass
class TrackerConfig:
    """Target waypoint index plus the two PID channels (stateful per episode)."""

    target_index: int = 5
    dt: float = 0.1
    accel_max: float = 4.0
    steer_max: float = 0.6
    min_target_distance: float = 0.05
    longitudinal: PidState = field(default_factory=lambda: PidState(1.5, 0.2, 0.0))
    lateral: PidState = field(default_factory=lambda: PidState(2.0, 0.0, 0.3))

    def reset(self) -> None:
        self.longitudinal.reset()
        self.lateral.reset()


def target_speed(traj: Trajectory, m: int, dt: float) -> float:
    """Desired speed from the spacing of waypoints m and m+1."""
    if m + 1 > traj.horizon:
        raise IndexError(f"need waypoint {m + 1} but horizon is {traj.horizon}")
    step = traj.point(m + 1) - traj.point(m)
    return math.hypot(step[0], step[1]) / dt


def longitudinal(v_desired: float, v: float, pid: PidState, dt: float) -> float:
    return pid.step(v_desired - v, dt)


def heading_error(traj: Trajectory, m: int, min_distance: float = 0.05) -> float:
    """Signed angle from the ego heading (+x) to the m-th waypoint.

    The magnitude is the angle between the unit heading and the unit
    target direction; the sign is positive for targets to the left so a
    PID channel can steer either way.
    """
    tx, ty = traj.point(m)
    if math.hypot(tx, ty) <= min_distance:
        raise DegenerateTarget(f"target waypoint within {min_distance} m of origin")
    return math.atan2(ty, tx)


def track(traj: Trajectory, ego_speed: float, cfg: TrackerConfig) -> Control:
    """Full tracking step; a degenerate (stopped) trajectory commands braking."""
    m = cfg.target_index
    if traj.horizon < m + 1:
        raise ValueError(f"trajectory horizon {traj.horizon} < target index {m} + 1")
    try:
        e_yaw = heading_error(traj, m, cfg.min_target_distance)
    except DegenerateTarget:
        return Control(-1.0, 0.0)
    accel = longitudinal(target_speed(traj, m, cfg.dt), ego_speed, cfg.longitudinal, cfg.dt)
    steer = cfg.lateral.step(e_yaw, cfg.dt)
    return Control(accel, steer).clamped(cfg.accel_max, cfg.steer_max)
