"""Deterministic top-down rasterizer producing the policy observation.

A 192x192 RGB byte image, always aligned with the ego frame (forward is
up): black background, lane markings as thin polylines, the route as a
thick blue line (purple while the ego's next governing light is red),
then green surrounding-vehicle boxes and red ego boxes for a short
history window with brightness fading into the past. All drawing is
integer DDA / scanline arithmetic on top of numpy, so identical inputs
produce byte-identical images.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .geometry import Polyline, Pose2D, lateral_offset
from .world import MapData, RED, WorldState, next_route_light


class EmptyHistory(Exception):
    """render() needs at least the current world snapshot."""


@dataclass(frozen=True)
class RenderConfig:
    px: int = 192
    fov: float = 40.0                     # meters covered by the full image side
    ego_anchor: tuple[float, float] = (20.0, 8.0)  # (lateral, from bottom edge)
    history_steps: int = 4                # past snapshots in addition to "now"
    history_stride: int = 2               # ticks between history snapshots
    brightness_decay: float = 0.75
    marking_white: tuple[int, int, int] = (255, 255, 255)
    marking_yellow: tuple[int, int, int] = (255, 255, 0)
    route_blue: tuple[int, int, int] = (0, 0, 255)
    route_purple: tuple[int, int, int] = (160, 32, 240)
    npc_green: tuple[int, int, int] = (0, 255, 0)
    ego_red: tuple[int, int, int] = (255, 0, 0)
    route_width: int = 3

    def __post_init__(self):
        if not 0.0 < self.brightness_decay <= 1.0:
            raise ValueError("brightness decay must be in (0, 1]")
        if not (0.0 < self.ego_anchor[0] < self.fov and 0.0 < self.ego_anchor[1] < self.fov):
            raise ValueError("ego anchor must lie inside the field of view")

    @property
    def pixels_per_meter(self) -> float:
        return self.px / self.fov


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.copysign(np.floor(np.abs(x) + 0.5), x)


def _pixel_floats(ego_pose: Pose2D, points, cfg: RenderConfig):
    """Unrounded (row, col) image coordinates of global points."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    c, s = math.cos(ego_pose.yaw), math.sin(ego_pose.yaw)
    dx = p[:, 0] - ego_pose.x
    dy = p[:, 1] - ego_pose.y
    x_local = c * dx + s * dy
    y_local = -s * dx + c * dy
    ppm = cfg.pixels_per_meter
    rows = (cfg.fov - cfg.ego_anchor[1] - x_local) * ppm
    cols = (cfg.ego_anchor[0] - y_local) * ppm
    return rows, cols


def world_to_pixel(ego_pose: Pose2D, point, cfg: RenderConfig | None = None):
    """(row, col) of a global point, or None when it falls off the canvas."""
    cfg = cfg or RenderConfig()
    rows, cols = _pixel_floats(ego_pose, point, cfg)
    r = int(_round_half_away(rows)[0])
    c = int(_round_half_away(cols)[0])
    if not (0 <= r < cfg.px and 0 <= c < cfg.px):
        return None
    return r, c


def _scaled_color(color, factor: float) -> np.ndarray:
    return _round_half_away(np.asarray(color, dtype=float) * factor).astype(np.uint8)


def _draw_polyline(img, rows, cols, color, width):
    px = img.shape[0]
    margin = 32.0
    reach = width // 2
    for i in range(len(rows) - 1):
        r0, r1 = rows[i], rows[i + 1]
        c0, c1 = cols[i], cols[i + 1]
        if (
            max(r0, r1) < -margin
            or min(r0, r1) > px + margin
            or max(c0, c1) < -margin
            or min(c0, c1) > px + margin
        ):
            continue
        steps = int(max(abs(r1 - r0), abs(c1 - c0))) + 1
        t = np.linspace(0.0, 1.0, steps + 1)
        rr = _round_half_away(r0 + (r1 - r0) * t).astype(np.int64)
        cc = _round_half_away(c0 + (c1 - c0) * t).astype(np.int64)
        for dr in range(-reach, reach + 1):
            for dc in range(-reach, reach + 1):
                r = rr + dr
                c = cc + dc
                m = (r >= 0) & (r < px) & (c >= 0) & (c < px)
                img[r[m], c[m]] = color


def _fill_quad(img, rows, cols, color):
    """Fill a convex quadrilateral given by unrounded corner coordinates."""
    px = img.shape[0]
    r_lo = max(0, int(math.floor(min(rows))))
    r_hi = min(px - 1, int(math.ceil(max(rows))))
    c_lo = max(0, int(math.floor(min(cols))))
    c_hi = min(px - 1, int(math.ceil(max(cols))))
    if r_lo > r_hi or c_lo > c_hi:
        return
    rr, cc = np.meshgrid(
        np.arange(r_lo, r_hi + 1), np.arange(c_lo, c_hi + 1), indexing="ij"
    )
    inside_pos = np.ones(rr.shape, dtype=bool)
    inside_neg = np.ones(rr.shape, dtype=bool)
    for i in range(4):
        j = (i + 1) % 4
        er = rows[j] - rows[i]
        ec = cols[j] - cols[i]
        cross = er * (cc - cols[i]) - ec * (rr - rows[i])
        inside_pos &= cross >= -1e-9
        inside_neg &= cross <= 1e-9
    inside = inside_pos | inside_neg
    img[rr[inside], cc[inside]] = color


@lru_cache(maxsize=8)
def _map_markings(map_data: MapData) -> tuple:
    """Lane boundary polylines (points, color key), offset from centerlines."""
    out = []
    for lane in map_data.lanes:
        pts = lane.centerline.points
        d = np.gradient(pts, axis=0)
        norm = np.hypot(d[:, 0], d[:, 1])
        left = np.column_stack([-d[:, 1] / norm, d[:, 0] / norm])
        half = lane.width / 2.0
        out.append((pts + half * left, lane.marking_left))
        out.append((pts - half * left, lane.marking_right))
    return tuple(out)


def _history_indices(length: int, cfg: RenderConfig) -> list[int]:
    """Snapshot indices per history step k = 0..steps, newest is k = 0."""
    idxs = []
    for k in range(cfg.history_steps + 1):
        i = length - 1 - k * cfg.history_stride
        if i < 0:
            break
        idxs.append(i)
    return idxs


def render(
    history: list[WorldState], route: Polyline, cfg: RenderConfig | None = None
) -> np.ndarray:
    """Rasterize the newest snapshot (with motion history) into an RGB image.

    ``history`` is the raw per-tick buffer, oldest first; the renderer
    itself picks snapshots at the configured stride.
    """
    if not history:
        raise EmptyHistory("need at least one world snapshot")
    cfg = cfg or RenderConfig()
    current = history[-1]
    ego_pose = current.ego.pose
    img = np.zeros((cfg.px, cfg.px, 3), dtype=np.uint8)

    for pts, marking in _map_markings(current.map):
        color = cfg.marking_yellow if marking == "yellow" else cfg.marking_white
        rows, cols = _pixel_floats(ego_pose, pts, cfg)
        _draw_polyline(img, rows, cols, np.asarray(color, np.uint8), width=1)

    route_color = cfg.route_blue
    _, s_ego = lateral_offset(route, (ego_pose.x, ego_pose.y))
    ahead = next_route_light(current, route, s_ego)
    if ahead is not None and current.light_states[ahead[0].id] == RED:
        route_color = cfg.route_purple
    rows, cols = _pixel_floats(ego_pose, route.points, cfg)
    _draw_polyline(img, rows, cols, np.asarray(route_color, np.uint8), cfg.route_width)

    idxs = _history_indices(len(history), cfg)
    for k in reversed(range(len(idxs))):   # oldest first so newer steps overwrite
        snapshot = history[idxs[k]]
        color = _scaled_color(cfg.npc_green, cfg.brightness_decay**k)
        for npc in snapshot.npcs:
            r, c = _pixel_floats(ego_pose, npc.box.corners(), cfg)
            _fill_quad(img, r, c, color)
    for k in reversed(range(len(idxs))):
        snapshot = history[idxs[k]]
        color = _scaled_color(cfg.ego_red, cfg.brightness_decay**k)
        r, c = _pixel_floats(ego_pose, snapshot.ego.box.corners(), cfg)
        _fill_quad(img, r, c, color)
    return img


def raster_bytes(img: np.ndarray) -> bytes:
    """Row-major RGB bytes of a raster (the on-disk and on-wire layout)."""
    return np.ascontiguousarray(img, dtype=np.uint8).tobytes()


def raster_from_bytes(data: bytes, cfg: RenderConfig | None = None) -> np.ndarray:
    cfg = cfg or RenderConfig()
    return np.frombuffer(data, dtype=np.uint8).reshape(cfg.px, cfg.px, 3).copy()


def save_png(img: np.ndarray, path) -> None:
    from PIL import Image

    Image.fromarray(img, mode="RGB").save(path)
