"""Closed-loop evaluation: planner -> tracker -> safety filter -> world.

Each episode wires a planner into the 10 Hz loop on a scenario (map,
seed, spawn, goal), watches for collisions and sustained lane departures,
and ends on success, infraction or timeout. Runs are deterministic per
(scenario, planner, config), so logs can be digest-compared.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .birdview import RenderConfig, render
from .geometry import Polyline, Pose2D, boxes_overlap, project_arclength, to_local
from .policy import MalformedResponse, Planner, PlannerTimeout
from .safety import SafetyParams, safe_control, safety_index
from .tracking import TrackerConfig, track
from .trajectory import Trajectory
from .world import (
    Control,
    VehicleState,
    WorldConfig,
    WorldState,
    load_map,
    make_world,
    plan_route,
    step_world,
)

COLLISION = "collision"
OUT_OF_LANE = "out_of_lane"


@dataclass(frozen=True)
class Scenario:
    map: str
    seed: int
    ego_spawn: tuple[str, float]
    goal: tuple[str, float]
    npc_count: int = 8
    time_limit: float = 120.0
    success_window: float = 10.0     # how far past the feature the goal marker sits
    ego_speed: float = 4.0
    ego_lateral_offset: float = 0.0  # recovery suites spawn the ego off-route
    name: str = ""

    def to_dict(self) -> dict:
        return {
            "map": self.map,
            "seed": self.seed,
            "ego_spawn": list(self.ego_spawn),
            "goal": list(self.goal),
            "npc_count": self.npc_count,
            "time_limit": self.time_limit,
            "success_window": self.success_window,
            "ego_speed": self.ego_speed,
            "ego_lateral_offset": self.ego_lateral_offset,
            "name": self.name,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        return cls(
            map=data["map"],
            seed=int(data["seed"]),
            ego_spawn=(data["ego_spawn"][0], float(data["ego_spawn"][1])),
            goal=(data["goal"][0], float(data["goal"][1])),
            npc_count=int(data.get("npc_count", 8)),
            time_limit=float(data.get("time_limit", 120.0)),
            success_window=float(data.get("success_window", 10.0)),
            ego_speed=float(data.get("ego_speed", 4.0)),
            ego_lateral_offset=float(data.get("ego_lateral_offset", 0.0)),
            name=data.get("name", ""),
        )

    @classmethod
    def load(cls, path) -> "Scenario":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def save(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1)


def builtin_scenario_path(name: str) -> Path:
    return Path(__file__).parent / "scenarios" / f"{name}.json"


@dataclass
class EpisodeLog:
    outcome: str                      # success | collision | out_of_lane | timeout
    distance_driven: float
    ticks: int
    events: list[tuple[int, str]]
    filter_active_ticks: int
    records: np.ndarray               # per tick: t, x, y, yaw, v, raw u, u, active, phi

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.outcome.encode())
        h.update(np.ascontiguousarray(self.records).tobytes())
        return h.hexdigest()

    def summary(self) -> dict:
        return {
            "outcome": self.outcome,
            "distance_m": round(self.distance_driven, 3),
            "ticks": self.ticks,
            "events": [[t, e] for t, e in self.events],
            "filter_active_ticks": self.filter_active_ticks,
        }


class InfractionMonitor:
    """Debounced, re-arming collision and lane-departure detection."""

    def __init__(
        self,
        route: Polyline,
        half_width: float,
        margin: float = 1.0,
        debounce_ticks: int = 5,
        rearm_ticks: int = 10,
    ):
        self.route = route
        self.threshold = half_width + margin
        self.debounce = debounce_ticks
        self.rearm = rearm_ticks
        self.progress = 0.0
        self.offset = 0.0
        self._out_run = 0
        self._out_clear = 0
        self._out_armed = True
        self._col_clear = 0
        self._col_armed = True

    def update(self, world: WorldState) -> list[str]:
        events = []
        ego = world.ego
        colliding = any(boxes_overlap(ego.box, npc.box) for npc in world.npcs)
        if colliding:
            if self._col_armed:
                events.append(COLLISION)
                self._col_armed = False
            self._col_clear = 0
        else:
            self._col_clear += 1
            if self._col_clear >= self.rearm:
                self._col_armed = True

        off, s = project_arclength(
            self.route,
            (ego.pose.x, ego.pose.y),
            self.progress - 3.0,
            self.progress + max(6.0, 5.0 * ego.speed * world.config.dt + 5.0),
        )
        self.progress = max(self.progress, s)
        self.offset = off
        if abs(off) > self.threshold:
            self._out_run += 1
            self._out_clear = 0
            if self._out_run == self.debounce and self._out_armed:
                events.append(OUT_OF_LANE)
                self._out_armed = False
        else:
            self._out_run = 0
            self._out_clear += 1
            if self._out_clear >= self.rearm:
                self._out_armed = True
        return events


def detect_infractions(monitor: InfractionMonitor, world: WorldState) -> list[str]:
    """Functional alias for one monitor update (events fired this tick)."""
    return monitor.update(world)


def _spawn_ego(map_data, scenario: Scenario, cfg: WorldConfig, route: Polyline) -> VehicleState:
    pos = route.point_at(0.0)
    direction = route.direction_at(0.0)
    yaw = math.atan2(direction[1], direction[0])
    left = np.array([-direction[1], direction[0]])
    pos = pos + scenario.ego_lateral_offset * left
    return VehicleState(
        pose=Pose2D(pos[0], pos[1], yaw),
        speed=scenario.ego_speed,
        half_length=cfg.vehicle_half_length,
        half_width=cfg.vehicle_half_width,
        route=route,
        route_progress=0.0,
        agent_id=0,
        route_extendable=False,
    )


def run_episode(
    scenario: Scenario,
    planner: Planner,
    tracker_cfg: TrackerConfig | None = None,
    safety_params: SafetyParams | None = None,
    safety_on: bool = True,
    world_cfg: WorldConfig | None = None,
    render_cfg: RenderConfig | None = None,
    goal_tolerance: float = 1.0,
) -> EpisodeLog:
    """Drive one scenario to a terminal state and return the full log.

    Planner timeouts and protocol errors turn into braking ticks; the
    episode keeps running.
    """
    map_data = load_map(scenario.map)
    cfg = world_cfg or WorldConfig()
    route = plan_route(map_data, scenario.ego_spawn, scenario.goal)
    ego = _spawn_ego(map_data, scenario, cfg, route)
    world = make_world(map_data, scenario.seed, scenario.npc_count, ego=ego, config=cfg)
    tracker = tracker_cfg or TrackerConfig(
        dt=cfg.dt, accel_max=cfg.accel_max, steer_max=cfg.steer_max
    )
    tracker.reset()
    params = safety_params or SafetyParams(
        wheelbase=cfg.wheelbase, accel_max=cfg.accel_max, steer_max=cfg.steer_max
    )
    rc = render_cfg or RenderConfig()
    monitor = InfractionMonitor(route, half_width=map_data.lane(scenario.ego_spawn[0]).width / 2.0)

    history: deque[WorldState] = deque(maxlen=1 + rc.history_steps * rc.history_stride)
    rows, events = [], []
    outcome = "timeout"
    distance = 0.0
    active_ticks = 0
    max_ticks = int(round(scenario.time_limit / cfg.dt))
    for tick in range(max_ticks):
        history.append(world)
        raster = render(list(history), route, rc) if planner.uses_raster else None
        if hasattr(planner, "observe"):
            planner.observe(world, route)
        try:
            traj = planner.plan(raster, world.ego.speed)
            u_raw = track(traj, world.ego.speed, tracker)
        except (PlannerTimeout, MalformedResponse):
            u_raw = Control(-1.0, 0.0)
        if safety_on:
            u, active = safe_control(world, u_raw, params)
        else:
            u, active = u_raw, False
        active_ticks += int(active)

        phi = -math.inf
        for npc in world.npcs:
            dx = npc.pose.x - world.ego.pose.x
            dy = npc.pose.y - world.ego.pose.y
            if dx * dx + dy * dy <= params.sensing_radius**2:
                phi = max(phi, safety_index(world.ego, npc, params))

        tick_events = monitor.update(world)
        events.extend((tick, e) for e in tick_events)
        rows.append(
            [
                tick * cfg.dt,
                world.ego.pose.x,
                world.ego.pose.y,
                world.ego.pose.yaw,
                world.ego.speed,
                u_raw.accel,
                u_raw.steer,
                u.accel,
                u.steer,
                float(active),
                phi,
            ]
        )
        if COLLISION in tick_events:
            outcome = COLLISION
            break
        if OUT_OF_LANE in tick_events:
            outcome = OUT_OF_LANE
            break
        if monitor.progress >= route.length - goal_tolerance and abs(monitor.offset) <= monitor.threshold:
            outcome = "success"
            break
        distance += world.ego.speed * cfg.dt
        world = step_world(world, u)

    return EpisodeLog(
        outcome=outcome,
        distance_driven=distance,
        ticks=len(rows),
        events=events,
        filter_active_ticks=active_ticks,
        records=np.array(rows) if rows else np.zeros((0, 11)),
    )


def success_rate(logs) -> float:
    logs = list(logs)
    if not logs:
        raise ValueError("no episode logs")
    return sum(1 for l in logs if l.outcome == "success") / len(logs)


def event_counts(logs) -> dict[str, int]:
    counts = {COLLISION: 0, OUT_OF_LANE: 0}
    for log in logs:
        for _, event in log.events:
            counts[event] += 1
    return counts


def infraction_distance(logs) -> dict[str, float]:
    """Kilometers driven per event, per event type; inf when clean."""
    logs = list(logs)
    if not logs:
        raise ValueError("no episode logs")
    total_km = sum(l.distance_driven for l in logs) / 1000.0
    counts = event_counts(logs)
    return {
        kind: (total_km / n if n else math.inf) for kind, n in counts.items()
    }


class BlindCruisePlanner(Planner):
    """Degraded planner for ablations: follows the route at constant speed,
    ignores all traffic and lights, optionally smears waypoints with noise."""

    uses_raster = False

    def __init__(
        self,
        horizon: int = 10,
        cruise: float = 6.0,
        dt: float = 0.1,
        noise_sigma: float = 0.0,
        seed: int = 0,
    ):
        self.horizon = horizon
        self.cruise = cruise
        self.dt = dt
        self.noise_sigma = noise_sigma
        self._rng = np.random.default_rng(np.random.SeedSequence([seed, 0xB11D]))
        self._world: WorldState | None = None
        self._route: Polyline | None = None

    def observe(self, world: WorldState, route: Polyline) -> None:
        self._world, self._route = world, route

    def plan(self, raster, ego_speed: float) -> Trajectory:
        ego = self._world.ego
        _, s0 = project_arclength(
            self._route,
            (ego.pose.x, ego.pose.y),
            ego.route_progress - 5.0,
            ego.route_progress + 40.0,
        )
        pts = np.array(
            [
                self._route.point_at(min(s0 + self.cruise * self.dt * k, self._route.length))
                for k in range(1, self.horizon + 1)
            ]
        )
        local = to_local(ego.pose, pts)
        if self.noise_sigma > 0:
            local = local + self._rng.normal(0.0, self.noise_sigma, local.shape)
        return Trajectory(local)


def write_report(path, scenario: Scenario, logs, extra: dict | None = None) -> None:
    counts = event_counts(logs)
    dist = infraction_distance(logs)
    report = {
        "scenario": scenario.to_dict(),
        "episodes": [log.summary() for log in logs],
        "metrics": {
            "episodes": len(logs),
            "success_rate": success_rate(logs),
            "collisions": counts[COLLISION],
            "out_of_lane": counts[OUT_OF_LANE],
            "km_per_collision": None if math.isinf(dist[COLLISION]) else dist[COLLISION],
            "km_per_out_of_lane": None if math.isinf(dist[OUT_OF_LANE]) else dist[OUT_OF_LANE],
        },
    }
    if extra:
        report.update(extra)
    with open(path, "w") as f:
        json.dump(report, f, indent=1)
