"""Model-based expert, noise augmentation and 10 Hz dataset recording.

The expert plans by rolling a speed profile along its route using the
same car-following and red-light envelopes as the scripted traffic, then
labels every recorded frame with the trajectory the vehicle actually
drove (its future poses mapped into the frame's ego coordinates).
Periodic control noise pushes the vehicle off the lane so the recovery
maneuvers land in the dataset; frames whose own tick or label horizon
touch a noise window are flagged and excluded from training exports.
"""

from __future__ import annotations

import json
import struct
from collections import deque
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from .birdview import RenderConfig, raster_bytes, raster_from_bytes, render
from .geometry import Polyline, Pose2D, project_arclength, to_local
from .policy import Planner
from .tracking import TrackerConfig, track
from .trajectory import DEFAULT_HORIZON, Trajectory
from .world import (
    RED,
    YELLOW,
    Control,
    WorldState,
    cruise_accel,
    find_crossing_conflict,
    find_leader,
    follow_accel,
    load_map,
    make_world,
    next_route_light,
    step_world,
    stop_accel,
    stop_engaged,
)


class OffRoute(Exception):
    """The ego vehicle is too far from its route for the expert to plan."""


class InsufficientFuture(Exception):
    """Not enough future poses remain to build a label."""


@dataclass(frozen=True)
class NoiseSchedule:
    """Periodic control perturbation: one window per period, none in the first."""

    period: float = 8.0
    duration: float = 1.0
    steer_amplitude: float = 0.25
    accel_amplitude: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.duration < self.period:
            raise ValueError("need 0 < duration < period")

    def is_active(self, t: float) -> bool:
        # The first window starts one full period in, so a run always opens
        # with clean driving.
        return t >= self.period and (t % self.period) < self.duration

    def window_index(self, t: float) -> int:
        return int(t // self.period)

    @classmethod
    def disabled(cls) -> "NoiseSchedule":
        return cls(steer_amplitude=0.0, accel_amplitude=0.0)


@dataclass(frozen=True, eq=False)
class DatasetFrame:
    raster: np.ndarray
    ego_speed: float
    label: Trajectory
    t: float
    noise_tainted: bool


def expert_plan(
    world: WorldState,
    route: Polyline,
    horizon: int = DEFAULT_HORIZON,
    dt: float | None = None,
) -> Trajectory:
    """Roll the route forward under the scripted speed envelopes.

    Points are spaced one tick of travel apart and returned in the current
    ego frame. Raises OffRoute when the vehicle is more than 5 m from the
    route.
    """
    cfg = world.config
    dt = cfg.dt if dt is None else dt
    ego = world.ego
    if route is ego.route:
        off, s0 = project_arclength(
            route,
            (ego.pose.x, ego.pose.y),
            ego.route_progress - 5.0,
            ego.route_progress + 40.0,
        )
    else:
        off, s0 = project_arclength(route, (ego.pose.x, ego.pose.y))
    if abs(off) >= 5.0:
        raise OffRoute(f"ego is {off:.2f} m from the route")

    leader = find_leader(world, ego)
    conflict = find_crossing_conflict(world, ego)
    stop_distance = None
    ahead = next_route_light(world, route, s0)
    if ahead is not None and world.light_states[ahead[0].id] in (RED, YELLOW):
        stop_distance = ahead[1]

    s, v = s0, ego.speed
    points = []
    for k in range(horizon):
        accel = cruise_accel(v, cfg)
        if leader is not None:
            gap, leader_speed = leader
            gap_k = gap + leader_speed * k * dt - (s - s0)
            accel = min(accel, follow_accel(gap_k, leader_speed, v, cfg))
        if conflict is not None:
            dist_k = conflict - (s - s0)
            if stop_engaged(dist_k, v, cfg):
                accel = min(accel, stop_accel(dist_k, v, cfg))
        if stop_distance is not None:
            dist_k = stop_distance - (s - s0)
            if stop_engaged(dist_k, v, cfg):
                accel = min(accel, stop_accel(dist_k, v, cfg))
        accel = min(max(accel, -cfg.accel_max), cfg.accel_max)
        v = max(0.0, v + accel * dt)
        s = s + v * dt
        points.append(route.point_at(min(s, route.length)))
    return Trajectory(to_local(ego.pose, np.asarray(points)))


class ExpertPlanner(Planner):
    """Planner-interface wrapper so the expert can drive the closed loop."""

    uses_raster = False

    def __init__(self, horizon: int = DEFAULT_HORIZON):
        self.horizon = horizon
        self._world: WorldState | None = None
        self._route: Polyline | None = None

    def observe(self, world: WorldState, route: Polyline) -> None:
        self._world, self._route = world, route

    def plan(self, raster, ego_speed: float) -> Trajectory:
        if self._world is None:
            raise RuntimeError("expert planner needs observe() before plan()")
        return expert_plan(self._world, self._route, self.horizon)


def perturb(
    u: Control,
    t: float,
    sched: NoiseSchedule,
    seed: int,
    accel_max: float = 4.0,
    steer_max: float = 0.6,
) -> tuple[Control, bool]:
    """Add the current window's constant control offset, if one is active.

    Each noise window draws its offset once from a generator seeded by
    (seed, window index), so replays are exact and windows are independent.
    """
    if not sched.is_active(t):
        return u, False
    rng = np.random.default_rng(
        np.random.SeedSequence([int(seed), 0x5EED, sched.window_index(t)])
    )
    da = float(rng.uniform(-sched.accel_amplitude, sched.accel_amplitude))
    ds = float(rng.uniform(-sched.steer_amplitude, sched.steer_amplitude))
    return Control(u.accel + da, u.steer + ds).clamped(accel_max, steer_max), True


def make_label(future_poses, current: Pose2D, horizon: int | None = None) -> Trajectory:
    """Transform realized future positions into the current ego frame."""
    poses = list(future_poses)
    horizon = len(poses) if horizon is None else horizon
    if len(poses) < horizon:
        raise InsufficientFuture(f"need {horizon} future poses, have {len(poses)}")
    pts = np.array([[p.x, p.y] for p in poses[:horizon]])
    return Trajectory(to_local(current, pts))


@dataclass
class Dataset:
    """An in-memory recording plus its provenance; serializable to a directory."""

    horizon: int
    dt: float
    map_name: str
    seed: int
    schedule: NoiseSchedule
    frames: list[DatasetFrame]

    RASTER_BYTES = 192 * 192 * 3

    def training_frames(self) -> list[DatasetFrame]:
        return [f for f in self.frames if not f.noise_tainted]

    @property
    def tainted_count(self) -> int:
        return sum(1 for f in self.frames if f.noise_tainted)

    def record_size(self) -> int:
        return self.RASTER_BYTES + 8 + 16 * self.horizon + 8 + 1

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        meta = {
            "horizon": self.horizon,
            "dt": self.dt,
            "map": self.map_name,
            "seed": self.seed,
            "schedule": asdict(self.schedule),
            "frame_count": len(self.frames),
            "tainted_count": self.tainted_count,
        }
        with open(directory / "meta.json", "w") as f:
            json.dump(meta, f, indent=1)
        with open(directory / "frames.bin", "wb") as f:
            for fr in self.frames:
                f.write(raster_bytes(fr.raster))
                f.write(struct.pack("<d", fr.ego_speed))
                f.write(fr.label.flat().astype("<f8").tobytes())
                f.write(struct.pack("<d", fr.t))
                f.write(struct.pack("<B", int(fr.noise_tainted)))

    @classmethod
    def load(cls, directory) -> "Dataset":
        directory = Path(directory)
        with open(directory / "meta.json") as f:
            meta = json.load(f)
        horizon = int(meta["horizon"])
        sched = NoiseSchedule(**meta["schedule"])
        ds = cls(
            horizon=horizon,
            dt=float(meta["dt"]),
            map_name=meta["map"],
            seed=int(meta["seed"]),
            schedule=sched,
            frames=[],
        )
        size = ds.record_size()
        raw = (directory / "frames.bin").read_bytes()
        if len(raw) != size * meta["frame_count"]:
            raise ValueError("frames.bin length does not match meta.json")
        for i in range(meta["frame_count"]):
            rec = raw[i * size : (i + 1) * size]
            off = cls.RASTER_BYTES
            raster = raster_from_bytes(rec[:off])
            (speed,) = struct.unpack("<d", rec[off : off + 8])
            off += 8
            label = Trajectory.from_flat(np.frombuffer(rec[off : off + 16 * horizon], "<f8"))
            off += 16 * horizon
            (t,) = struct.unpack("<d", rec[off : off + 8])
            off += 8
            tainted = bool(rec[off])
            ds.frames.append(DatasetFrame(raster, speed, label, t, tainted))
        return ds


def collect(
    map_spec,
    seed: int,
    duration: float,
    sched: NoiseSchedule | None = None,
    horizon: int = DEFAULT_HORIZON,
    npc_count: int = 8,
    render_cfg: RenderConfig | None = None,
) -> Dataset:
    """Run the expert in closed loop and record one frame per tick.

    Frames in the last label-horizon of the run are dropped; frames whose
    own tick or any label tick falls in a noise window are flagged tainted.
    """
    map_data = load_map(map_spec)
    sched = sched or NoiseSchedule()
    rc = render_cfg or RenderConfig()
    world = make_world(map_data, seed, npc_count=npc_count)
    cfg = world.config
    dt = cfg.dt
    total_ticks = int(round(duration / dt))
    if total_ticks < horizon:
        raise ValueError("duration must cover at least one label horizon")
    tracker = TrackerConfig(dt=dt, accel_max=cfg.accel_max, steer_max=cfg.steer_max)

    history: deque[WorldState] = deque(maxlen=1 + rc.history_steps * rc.history_stride)
    rasters, speeds, poses, noise_flags = [], [], [], []
    for tick in range(total_ticks):
        history.append(world)
        rasters.append(render(list(history), world.ego.route, rc))
        speeds.append(world.ego.speed)
        poses.append(world.ego.pose)
        traj = expert_plan(world, world.ego.route, horizon, dt)
        u = track(traj, world.ego.speed, tracker)
        u, active = perturb(u, tick * dt, sched, seed, cfg.accel_max, cfg.steer_max)
        noise_flags.append(active)
        world = step_world(world, u)
    poses.append(world.ego.pose)

    frames = []
    for i in range(total_ticks - horizon):
        label = make_label(poses[i + 1 : i + 1 + horizon], poses[i])
        tainted = any(noise_flags[i : i + horizon + 1])
        frames.append(DatasetFrame(rasters[i], speeds[i], label, i * dt, tainted))
    map_name = map_spec if isinstance(map_spec, str) else "custom"
    return Dataset(
        horizon=horizon,
        dt=dt,
        map_name=str(map_name),
        seed=seed,
        schedule=sched,
        frames=frames,
    )
