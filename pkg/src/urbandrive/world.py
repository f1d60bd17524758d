"""The simulated driving environment.

A world holds a lane-graph map with traffic lights, one ego vehicle and a
set of scripted surrounding vehicles, all stepped synchronously at a fixed
0.1 s tick with kinematic-bicycle dynamics. Stepping is fully
deterministic: every random draw is derived from (world seed, tick, agent)
so traces replay bit-identically and are invariant to agent ordering.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from .geometry import (
    OrientedBox,
    Polyline,
    Pose2D,
    lateral_offset,
    normalize_angle,
    project_arclength,
    project_points,
)

GREEN, YELLOW, RED = "green", "yellow", "red"
MARKING_COLORS = ("white", "yellow")


class NoRoute(Exception):
    """The goal lane is unreachable from the start lane."""


# ---------------------------------------------------------------------------
# Map model
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Lane:
    id: str
    centerline: Polyline
    width: float
    marking_left: str
    marking_right: str
    successors: tuple[str, ...]


@dataclass(frozen=True, eq=False)
class TrafficLight:
    id: str
    stop_point: tuple[float, float]
    governed_lanes: tuple[str, ...]
    cycle: tuple[float, float, float]  # green, yellow, red durations
    phase_offset: float = 0.0


@dataclass(frozen=True, eq=False)
class MapData:
    lanes: tuple[Lane, ...]
    traffic_lights: tuple[TrafficLight, ...]
    spawn_points: tuple[tuple[str, float], ...]

    def __post_init__(self):
        ids = {lane.id for lane in self.lanes}
        for lane in self.lanes:
            if lane.width <= 0:
                raise ValueError(f"lane {lane.id} has non-positive width")
            if lane.marking_left not in MARKING_COLORS or lane.marking_right not in MARKING_COLORS:
                raise ValueError(f"lane {lane.id} has unknown marking color")
            for succ in lane.successors:
                if succ not in ids:
                    raise ValueError(f"lane {lane.id} references missing successor {succ}")
        for light in self.traffic_lights:
            if any(d <= 0 for d in light.cycle):
                raise ValueError(f"light {light.id} needs positive cycle durations")
            for lane_id in light.governed_lanes:
                if lane_id not in ids:
                    raise ValueError(f"light {light.id} governs missing lane {lane_id}")
        for lane_id, s in self.spawn_points:
            if lane_id not in ids:
                raise ValueError(f"spawn point on missing lane {lane_id}")

    def lane(self, lane_id: str) -> Lane:
        return _lane_index(self)[lane_id]

    @classmethod
    def from_dict(cls, data: dict) -> "MapData":
        lanes = tuple(
            Lane(
                id=ln["id"],
                centerline=Polyline(np.asarray(ln["centerline"], dtype=float)),
                width=float(ln["width"]),
                marking_left=ln["marking_left"],
                marking_right=ln["marking_right"],
                successors=tuple(ln["successors"]),
            )
            for ln in data["lanes"]
        )
        lights = tuple(
            TrafficLight(
                id=lt["id"],
                stop_point=(float(lt["stop_point"][0]), float(lt["stop_point"][1])),
                governed_lanes=tuple(lt["governed_lanes"]),
                cycle=tuple(float(x) for x in lt["cycle"]),
                phase_offset=float(lt.get("phase_offset", 0.0)),
            )
            for lt in data["traffic_lights"]
        )
        spawns = tuple((sp[0], float(sp[1])) for sp in data["spawn_points"])
        return cls(lanes=lanes, traffic_lights=lights, spawn_points=spawns)

    @classmethod
    def load(cls, path) -> "MapData":
        with open(path) as f:
            return cls.from_dict(json.load(f))


@lru_cache(maxsize=None)
def _lane_index(map_data: MapData) -> dict[str, Lane]:
    return {lane.id: lane for lane in map_data.lanes}


def builtin_map_path(name: str) -> Path:
    """Path of a bundled map ('intersection' or 'roundabout')."""
    return Path(__file__).parent / "maps" / f"{name}.json"


def load_map(spec) -> MapData:
    """Load a map from a path, or by bundled name."""
    if isinstance(spec, MapData):
        return spec
    path = Path(spec)
    if not path.exists() and not path.suffix:
        path = builtin_map_path(str(spec))
    return MapData.load(path)


# ---------------------------------------------------------------------------
# Vehicles and controls
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WorldConfig:
    dt: float = 0.1
    wheelbase: float = 2.5
    accel_max: float = 4.0
    steer_max: float = 0.6
    cruise_speed: float = 6.0
    follow_gap: float = 8.0          # bumper gap below which car-following engages
    follow_standoff: float = 2.0     # bumper gap held behind a leader
    gap_gain: float = 0.5            # speed correction per meter of surplus gap
    speed_gain: float = 1.5          # accel per m/s of speed error
    brake_decel: float = 3.0         # comfortable braking envelope
    steer_lookahead: float = 5.0
    steer_gain: float = 1.0
    lateral_capture: float = 1.5     # how close to my route a vehicle must be to count as a leader
    stop_buffer: float = 0.3         # aim to stop this far short of a stop point
    stop_hold: float = 2.5           # inside this range a red light always holds the vehicle
    vehicle_half_length: float = 2.2
    vehicle_half_width: float = 0.9
    route_extend_margin: float = 35.0


@dataclass(frozen=True)
class Control:
    accel: float
    steer: float

    def clamped(self, accel_max: float, steer_max: float) -> "Control":
        return Control(
            min(max(self.accel, -accel_max), accel_max),
            min(max(self.steer, -steer_max), steer_max),
        )


@dataclass(frozen=True, eq=False)
class VehicleState:
    pose: Pose2D
    speed: float
    half_length: float
    half_width: float
    route: Polyline | None = None
    route_progress: float = 0.0
    agent_id: int = 0
    route_lane_ids: tuple[str, ...] = ()
    route_extendable: bool = False

    def __post_init__(self):
        if self.speed < 0:
            raise ValueError("speed must be non-negative")

    @property
    def box(self) -> OrientedBox:
        return OrientedBox(
            self.pose.x, self.pose.y, self.pose.yaw, self.half_length, self.half_width
        )

    @property
    def velocity(self) -> np.ndarray:
        return self.speed * self.pose.heading


@dataclass(frozen=True, eq=False)
class WorldState:
    tick: int
    time: float
    ego: VehicleState
    npcs: tuple[VehicleState, ...]
    light_states: dict[str, str]
    map: MapData
    rng_seed: int
    config: WorldConfig


# ---------------------------------------------------------------------------
# Dynamics
# ---------------------------------------------------------------------------

def step_vehicle(state: VehicleState, u: Control, dt: float, wheelbase: float) -> VehicleState:
    """One kinematic-bicycle Euler step; speed is clamped at zero (no reverse)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    v = state.speed
    yaw = state.pose.yaw
    x = state.pose.x + v * math.cos(yaw) * dt
    y = state.pose.y + v * math.sin(yaw) * dt
    new_yaw = normalize_angle(yaw + v * math.tan(u.steer) / wheelbase * dt)
    new_v = max(0.0, v + u.accel * dt)
    return replace(state, pose=Pose2D(x, y, new_yaw), speed=new_v)


# ---------------------------------------------------------------------------
# Routing
# ---------------------------------------------------------------------------

def plan_route(
    map_data: MapData, start: tuple[str, float], goal: tuple[str, float], spacing: float = 1.0
) -> Polyline:
    """Shortest lane-graph path from start to goal, resampled at 1 m.

    Raises NoRoute when the goal cannot be reached through successor links.
    """
    start_lane, s0 = start
    goal_lane, s1 = goal
    lanes = _lane_index(map_data)
    if start_lane not in lanes or goal_lane not in lanes:
        raise NoRoute(f"unknown lane in {start} -> {goal}")

    if start_lane == goal_lane and s0 < s1:
        return lanes[start_lane].centerline.slice(s0, s1).resample(spacing)

    # Dijkstra over lane entries: dist[l] = driving distance from the start
    # position to the beginning of lane l.
    lengths = {lid: lane.centerline.length for lid, lane in lanes.items()}
    base = lengths[start_lane] - s0
    dist: dict[str, float] = {}
    parent: dict[str, str | None] = {}
    heap: list[tuple[float, str, str | None]] = [
        (base, succ, None) for succ in lanes[start_lane].successors
    ]
    heapq.heapify(heap)
    goal_chain: list[str] | None = None
    while heap:
        d, lane_id, prev = heapq.heappop(heap)
        if lane_id in dist:
            continue
        dist[lane_id] = d
        parent[lane_id] = prev
        if lane_id == goal_lane:
            chain = [lane_id]
            while parent[chain[-1]] is not None:
                chain.append(parent[chain[-1]])
            goal_chain = chain[::-1]
            break
        for succ in lanes[lane_id].successors:
            if succ not in dist:
                heapq.heappush(heap, (d + lengths[lane_id], succ, lane_id))
    if goal_chain is None:
        raise NoRoute(f"no path from {start} to {goal}")

    pieces = [lanes[start_lane].centerline.slice(s0, lengths[start_lane]).points]
    for lane_id in goal_chain[:-1]:
        pieces.append(lanes[lane_id].centerline.points)
    if s1 > 0:
        pieces.append(lanes[goal_lane].centerline.slice(0.0, s1).points)
    route = Polyline(pieces[0])
    for piece in pieces[1:]:
        route = route.extended(piece)
    return route.resample(spacing)


def light_state(light: TrafficLight, time: float) -> str:
    """Phase of the cycle at a given time: green, then yellow, then red."""
    green, yellow, red = light.cycle
    phase = (time + light.phase_offset) % (green + yellow + red)
    if phase < green:
        return GREEN
    if phase < green + yellow:
        return YELLOW
    return RED


def choose_branch(rng: np.random.Generator, successors: tuple[str, ...]) -> str:
    """Uniform draw among successor lanes using the given generator."""
    if not successors:
        raise ValueError("cannot branch with no successors")
    if len(successors) == 1:
        return successors[0]
    return successors[int(rng.integers(len(successors)))]


# ---------------------------------------------------------------------------
# Scripted longitudinal / lateral behavior (shared by NPCs and the expert)
# ---------------------------------------------------------------------------

def cruise_accel(speed: float, cfg: WorldConfig, target: float | None = None) -> float:
    target = cfg.cruise_speed if target is None else target
    return cfg.speed_gain * (target - speed)

def follow_accel(gap: float, leader_speed: float, speed: float, cfg: WorldConfig) -> float:
    """Car-following law: track leader speed while holding a standoff gap."""
    if gap <= cfg.follow_standoff:
        return -cfg.accel_max
    target = min(
        cfg.cruise_speed,
        max(0.0, leader_speed + cfg.gap_gain * (gap - cfg.follow_standoff)),
    )
    return cfg.speed_gain * (target - speed)

def stop_engaged(distance: float, speed: float, cfg: WorldConfig) -> bool:
    """Whether a stopping profile is needed for a stop point this far ahead.

    Engages inside the comfortable braking envelope (with a one-tick lead
    for the discrete update) and latches inside the hold zone so a nearly
    stopped vehicle cannot creep across the line.
    """
    envelope = speed * speed / (2.0 * cfg.brake_decel) + speed * cfg.dt
    return distance <= max(envelope, cfg.stop_hold)

def stop_accel(distance: float, speed: float, cfg: WorldConfig) -> float:
    """Constant-deceleration profile aiming slightly short of the stop point."""
    remaining = distance - cfg.stop_buffer
    if remaining <= 0.05:
        return -cfg.accel_max
    return -speed * speed / (2.0 * remaining)


def find_leader(
    world: WorldState, vehicle: VehicleState
) -> tuple[float, float] | None:
    """Nearest vehicle ahead on (or crossing) this vehicle's route.

    Returns (bumper gap, leader speed) or None. Any other vehicle whose
    center lies within ``lateral_capture`` of the route and ahead of us
    counts, so merging and crossing conflicts trigger yielding too.
    """
    cfg = world.config
    route = vehicle.route
    if route is None:
        return None
    s_me = vehicle.route_progress
    horizon = cfg.follow_gap + 2.0 * (vehicle.half_length + cfg.vehicle_half_length) + 8.0
    best: tuple[float, float, int] | None = None
    for other in (world.ego, *world.npcs):
        if other is vehicle or other.agent_id == vehicle.agent_id:
            continue
        dx = other.pose.x - vehicle.pose.x
        dy = other.pose.y - vehicle.pose.y
        if dx * dx + dy * dy > (horizon + 2.0) ** 2:
            continue
        off, s_o = project_arclength(
            route, (other.pose.x, other.pose.y), s_me - 2.0, s_me + horizon
        )
        if abs(off) > cfg.lateral_capture or s_o <= s_me:
            continue
        gap = (s_o - s_me) - vehicle.half_length - other.half_length
        if gap > cfg.follow_gap:
            continue
        if best is None or (gap, other.agent_id) < (best[0], best[2]):
            best = (gap, other.speed, other.agent_id)
    return None if best is None else (best[0], best[1])


def find_crossing_conflict(world: WorldState, vehicle: VehicleState) -> float | None:
    """Yield decision for merging and crossing traffic.

    Rolls every nearby moving vehicle forward along its own route at its
    current speed and finds the first moment it enters this vehicle's
    route corridor. Whoever clearly reaches the meeting point later yields
    to the other; near-simultaneous arrivals are broken by agent id so a
    conflicting pair never deadlocks. Returns the distance at which to
    stop (short of the meeting point), or None when nobody has priority
    over us.
    """
    cfg = world.config
    if vehicle.route is None:
        return None
    route = vehicle.route
    s_me = vehicle.route_progress
    horizon_t = 6.0
    samples = np.linspace(0.0, horizon_t, 16)
    best = None
    for other in (world.ego, *world.npcs):
        if other is vehicle or other.agent_id == vehicle.agent_id:
            continue
        if other.route is None or other.speed < 0.3:
            continue
        dx = other.pose.x - vehicle.pose.x
        dy = other.pose.y - vehicle.pose.y
        if dx * dx + dy * dy > 30.0**2:
            continue
        future_s = np.minimum(
            other.route_progress + other.speed * samples, other.route.length
        )
        future = np.array([other.route.point_at(s) for s in future_s])
        offs, arcs = project_points(route, future, s_me - 1.0, s_me + 40.0)
        inside = (np.abs(offs) <= cfg.lateral_capture + 0.3) & (arcs > s_me + 0.3)
        if not inside.any():
            continue
        k = int(np.argmax(inside))
        if k == 0:
            continue  # already inside the corridor: plain car following
        t_theirs = float(samples[k])
        d_mine = float(arcs[k] - s_me)
        t_mine = d_mine / max(vehicle.speed, 0.3)
        # priority: clearly earlier arrival goes first, ties go to lower id
        other_first = t_theirs < t_mine - 0.3 or (
            abs(t_theirs - t_mine) <= 0.3 and other.agent_id < vehicle.agent_id
        )
        if not other_first:
            continue
        stop_d = d_mine - (vehicle.half_length + other.half_width + 1.5)
        if best is None or stop_d < best:
            best = stop_d
    return best


def next_route_light(
    world: WorldState, route: Polyline, s_from: float
) -> tuple[TrafficLight, float] | None:
    """Nearest traffic light whose stop point lies ahead on the route."""
    best = None
    for light in world.map.traffic_lights:
        sp = light.stop_point
        dx = sp[0] - route.point_at(s_from)[0]
        dy = sp[1] - route.point_at(s_from)[1]
        if dx * dx + dy * dy > 80.0**2:
            continue
        off, s_l = project_arclength(route, sp, s_from - 3.0, s_from + 80.0)
        # a stop point crossed by a hair still governs, so a vehicle caught
        # right on the line keeps holding instead of rolling through
        if abs(off) > 3.0 or s_l <= s_from - 1.5:
            continue
        if best is None or s_l < best[1]:
            best = (light, s_l)
    if best is None:
        return None
    return best[0], best[1] - s_from


def npc_control(world: WorldState, npc_index: int) -> Control:
    """Scripted control: follow the route, keep distance, stop at red lights."""
    cfg = world.config
    veh = world.npcs[npc_index]
    if veh.route is None:
        return Control(0.0, 0.0)

    # Lateral: proportional heading law toward the route point 5 m ahead.
    target = veh.route.point_at(veh.route_progress + cfg.steer_lookahead)
    c, s = math.cos(veh.pose.yaw), math.sin(veh.pose.yaw)
    dx, dy = target[0] - veh.pose.x, target[1] - veh.pose.y
    heading_err = math.atan2(-s * dx + c * dy, c * dx + s * dy)
    steer = cfg.steer_gain * heading_err

    accel = cruise_accel(veh.speed, cfg)
    leader = find_leader(world, veh)
    if leader is not None:
        accel = min(accel, follow_accel(leader[0], leader[1], veh.speed, cfg))
    conflict = find_crossing_conflict(world, veh)
    if conflict is not None and stop_engaged(conflict, veh.speed, cfg):
        accel = min(accel, stop_accel(conflict, veh.speed, cfg))
    ahead = next_route_light(world, veh.route, veh.route_progress)
    if ahead is not None:
        light, distance = ahead
        if world.light_states[light.id] in (RED, YELLOW) and stop_engaged(
            distance, veh.speed, cfg
        ):
            accel = min(accel, stop_accel(distance, veh.speed, cfg))
    return Control(accel, steer).clamped(cfg.accel_max, cfg.steer_max)


# ---------------------------------------------------------------------------
# World stepping
# ---------------------------------------------------------------------------

def _agent_rng(world: WorldState, tick: int, agent_id: int) -> np.random.Generator:
    return np.random.default_rng(
        np.random.SeedSequence([world.rng_seed, tick, agent_id])
    )


def _advance_route(world: WorldState, veh: VehicleState, tick: int) -> VehicleState:
    if veh.route is None:
        return veh
    window = max(5.0, 4.0 * veh.speed * world.config.dt + 3.0)
    _, s = project_arclength(
        veh.route,
        (veh.pose.x, veh.pose.y),
        veh.route_progress - 2.0,
        veh.route_progress + window,
    )
    veh = replace(veh, route_progress=max(veh.route_progress, s))
    if not veh.route_extendable or not veh.route_lane_ids:
        return veh
    if veh.route.length - veh.route_progress >= world.config.route_extend_margin:
        return veh
    lanes = _lane_index(world.map)
    last = lanes[veh.route_lane_ids[-1]]
    if not last.successors:
        return veh
    nxt = choose_branch(_agent_rng(world, tick, veh.agent_id), last.successors)
    return replace(
        veh,
        route=veh.route.extended(lanes[nxt].centerline.points),
        route_lane_ids=veh.route_lane_ids + (nxt,),
    )


def step_world(world: WorldState, ego_u: Control) -> WorldState:
    """Advance one tick: lights, then all vehicles from the pre-step snapshot."""
    cfg = world.config
    dt = cfg.dt
    new_tick = world.tick + 1
    controls = [npc_control(world, i) for i in range(len(world.npcs))]
    npcs = []
    for veh, u in zip(world.npcs, controls):
        moved = step_vehicle(veh, u, dt, cfg.wheelbase)
        npcs.append(_advance_route(world, moved, new_tick))
    ego = step_vehicle(world.ego, ego_u.clamped(cfg.accel_max, cfg.steer_max), dt, cfg.wheelbase)
    ego = _advance_route(world, ego, new_tick)
    new_time = new_tick * dt
    lights = {lt.id: light_state(lt, new_time) for lt in world.map.traffic_lights}
    return replace(
        world, tick=new_tick, time=new_time, ego=ego, npcs=tuple(npcs), light_states=lights
    )


# ---------------------------------------------------------------------------
# World construction
# ---------------------------------------------------------------------------

def _initial_route(
    map_data: MapData, lane_id: str, s: float, rng: np.random.Generator, min_length: float
) -> tuple[Polyline, tuple[str, ...]]:
    lanes = _lane_index(map_data)
    lane = lanes[lane_id]
    route = lane.centerline.slice(s, lane.centerline.length)
    chain = [lane_id]
    while route.length < min_length and lanes[chain[-1]].successors:
        nxt = choose_branch(rng, lanes[chain[-1]].successors)
        route = route.extended(lanes[nxt].centerline.points)
        chain.append(nxt)
    return route, tuple(chain)


def spawn_vehicle(
    map_data: MapData,
    lane_id: str,
    s: float,
    agent_id: int,
    cfg: WorldConfig,
    rng: np.random.Generator,
    speed: float = 0.0,
    extendable: bool = True,
    min_route: float = 80.0,
) -> VehicleState:
    route, chain = _initial_route(map_data, lane_id, s, rng, min_route)
    pos = route.point_at(0.0)
    direction = route.direction_at(0.0)
    pose = Pose2D(pos[0], pos[1], math.atan2(direction[1], direction[0]))
    return VehicleState(
        pose=pose,
        speed=speed,
        half_length=cfg.vehicle_half_length,
        half_width=cfg.vehicle_half_width,
        route=route,
        route_progress=0.0,
        agent_id=agent_id,
        route_lane_ids=chain,
        route_extendable=extendable,
    )


def make_world(
    map_data,
    seed: int,
    npc_count: int = 8,
    ego: VehicleState | None = None,
    config: WorldConfig | None = None,
) -> WorldState:
    """Build a tick-0 world with seeded NPC placement.

    NPCs occupy distinct spawn points; spawn points within 12 m of the ego
    are skipped so scenarios never start in contact.
    """
    map_data = load_map(map_data)
    cfg = config or WorldConfig()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0FFEE]))
    if ego is None:
        lane_id, s = map_data.spawn_points[0]
        ego = spawn_vehicle(map_data, lane_id, s, agent_id=0, cfg=cfg, rng=rng)
    candidates = []
    for lane_id, s in map_data.spawn_points:
        p = map_data.lane(lane_id).centerline.point_at(s)
        if math.hypot(p[0] - ego.pose.x, p[1] - ego.pose.y) >= 12.0:
            candidates.append((lane_id, s))
    if npc_count > len(candidates):
        raise ValueError(f"map offers only {len(candidates)} usable spawn points")
    picks = rng.choice(len(candidates), size=npc_count, replace=False) if npc_count else []
    npcs = tuple(
        spawn_vehicle(map_data, *candidates[int(i)], agent_id=k + 1, cfg=cfg, rng=rng)
        for k, i in enumerate(picks)
    )
    lights = {lt.id: light_state(lt, 0.0) for lt in map_data.traffic_lights}
    return WorldState(
        tick=0,
        time=0.0,
        ego=ego,
        npcs=npcs,
        light_states=lights,
        map=map_data,
        rng_seed=seed,
        config=cfg,
    )
