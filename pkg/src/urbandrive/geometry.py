"""Planar geometry shared by the simulator, rasterizer and controllers.

Everything is double-precision float math over immutable values: poses,
polylines (lane centerlines, routes) and oriented boxes (vehicle
footprints). Angles are radians, distances meters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

TWO_PI = 2.0 * math.pi


def normalize_angle(angle: float) -> float:
    """Wrap an angle to the canonical range (-pi, pi]."""
    return math.pi - (math.pi - angle) % TWO_PI


@dataclass(frozen=True)
class Pose2D:
    """Position plus heading; yaw is normalized on construction."""

    x: float
    y: float
    yaw: float

    def __post_init__(self):
        object.__setattr__(self, "yaw", normalize_angle(float(self.yaw)))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])

    @property
    def heading(self) -> np.ndarray:
        return np.array([math.cos(self.yaw), math.sin(self.yaw)])


def to_local(ref: Pose2D, point) -> np.ndarray:
    """Map global point(s) into the frame of ``ref`` (+x forward, +y left).

    Accepts a single (x, y) pair or an (N, 2) array.
    """
    p = np.asarray(point, dtype=float)
    c, s = math.cos(ref.yaw), math.sin(ref.yaw)
    d = p - np.array([ref.x, ref.y])
    if d.ndim == 1:
        return np.array([c * d[0] + s * d[1], -s * d[0] + c * d[1]])
    return np.column_stack([c * d[:, 0] + s * d[:, 1], -s * d[:, 0] + c * d[:, 1]])


def to_global(ref: Pose2D, point) -> np.ndarray:
    """Exact inverse of :func:`to_local`."""
    p = np.asarray(point, dtype=float)
    c, s = math.cos(ref.yaw), math.sin(ref.yaw)
    if p.ndim == 1:
        return np.array([c * p[0] - s * p[1] + ref.x, s * p[0] + c * p[1] + ref.y])
    return np.column_stack(
        [c * p[:, 0] - s * p[:, 1] + ref.x, s * p[:, 0] + c * p[:, 1] + ref.y]
    )


@dataclass(frozen=True, eq=False)
class Polyline:
    """Ordered sequence of distinct 2D points with strictly increasing arclength."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise ValueError("polyline needs an (N, 2) array with N >= 2")
        if np.any(np.all(np.abs(np.diff(pts, axis=0)) < 1e-12, axis=1)):
            raise ValueError("consecutive polyline points must be distinct")
        pts = pts.copy()
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @cached_property
    def segment_lengths(self) -> np.ndarray:
        return np.hypot(*np.diff(self.points, axis=0).T)

    @cached_property
    def arclengths(self) -> np.ndarray:
        """Cumulative arclength at each vertex, starting at 0."""
        return np.concatenate([[0.0], np.cumsum(self.segment_lengths)])

    @property
    def length(self) -> float:
        return float(self.arclengths[-1])

    def point_at(self, s: float) -> np.ndarray:
        """Interpolated point at arclength ``s`` (clamped to the ends)."""
        s = min(max(s, 0.0), self.length)
        cum = self.arclengths
        return np.array(
            [np.interp(s, cum, self.points[:, 0]), np.interp(s, cum, self.points[:, 1])]
        )

    def direction_at(self, s: float) -> np.ndarray:
        """Unit tangent of the segment containing arclength ``s``."""
        cum = self.arclengths
        i = int(np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(cum) - 2))
        d = self.points[i + 1] - self.points[i]
        return d / np.hypot(*d)

    def slice(self, s0: float, s1: float) -> "Polyline":
        """Sub-polyline between two arclengths, s0 < s1."""
        if not 0.0 <= s0 < s1 <= self.length + 1e-9:
            raise ValueError(f"bad slice range [{s0}, {s1}] on length {self.length}")
        s1 = min(s1, self.length)
        cum = self.arclengths
        interior = self.points[(cum > s0 + 1e-9) & (cum < s1 - 1e-9)]
        pts = np.vstack([self.point_at(s0), interior, self.point_at(s1)])
        return Polyline(_dedupe(pts))

    def resample(self, spacing: float) -> "Polyline":
        """Evenly spaced copy (the final point is kept exactly)."""
        s = np.arange(0.0, self.length, spacing)
        if self.length - s[-1] < 1e-9:
            s = s[:-1]
        s = np.append(s, self.length)
        cum = self.arclengths
        pts = np.column_stack(
            [np.interp(s, cum, self.points[:, 0]), np.interp(s, cum, self.points[:, 1])]
        )
        return Polyline(pts)

    def reversed(self) -> "Polyline":
        return Polyline(self.points[::-1])

    def extended(self, more_points: np.ndarray) -> "Polyline":
        """Concatenate more points, dropping a duplicated joint vertex."""
        pts = np.vstack([self.points, np.asarray(more_points, dtype=float)])
        return Polyline(_dedupe(pts))


def _dedupe(points: np.ndarray) -> np.ndarray:
    keep = np.concatenate(
        [[True], ~np.all(np.abs(np.diff(points, axis=0)) < 1e-12, axis=1)]
    )
    return points[keep]


@dataclass(frozen=True)
class OrientedBox:
    """Rectangle given by center, heading and half extents (length >= width)."""

    cx: float
    cy: float
    yaw: float
    half_length: float
    half_width: float

    def __post_init__(self):
        if not self.half_length > 0 or not self.half_width > 0:
            raise ValueError("box half extents must be positive")
        if self.half_length < self.half_width:
            raise ValueError("vehicle convention requires half_length >= half_width")

    @property
    def center(self) -> np.ndarray:
        return np.array([self.cx, self.cy])

    def corners(self) -> np.ndarray:
        """The 4 corners, counter-clockwise in the world frame."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        u = np.array([c, s]) * self.half_length
        v = np.array([-s, c]) * self.half_width
        ctr = self.center
        return np.array([ctr + u + v, ctr - u + v, ctr - u - v, ctr + u - v])


def boxes_overlap(a: OrientedBox, b: OrientedBox) -> bool:
    """Separating-axis intersection test over the 4 edge normals."""
    dx = b.cx - a.cx
    dy = b.cy - a.cy
    for box in (a, b):
        c, s = math.cos(box.yaw), math.sin(box.yaw)
        for nx, ny in ((c, s), (-s, c)):
            ra = _radius_on_axis(a, nx, ny)
            rb = _radius_on_axis(b, nx, ny)
            if abs(dx * nx + dy * ny) > ra + rb:
                return False
    return True


def _radius_on_axis(box: OrientedBox, nx: float, ny: float) -> float:
    c, s = math.cos(box.yaw), math.sin(box.yaw)
    return box.half_length * abs(c * nx + s * ny) + box.half_width * abs(-s * nx + c * ny)


def lateral_offset(line: Polyline, point) -> tuple[float, float]:
    """Signed distance from a polyline plus the foot point's arclength.

    Positive offsets are to the left of the travel direction. Ties between
    equidistant segments go to the lower arclength.
    """
    p = np.asarray(point, dtype=float)
    a = line.points[:-1]
    d = np.diff(line.points, axis=0)
    seg_len2 = np.einsum("ij,ij->i", d, d)
    t = np.clip(np.einsum("ij,ij->i", p - a, d) / seg_len2, 0.0, 1.0)
    foot = a + t[:, None] * d
    delta = p - foot
    dist2 = np.einsum("ij,ij->i", delta, delta)
    i = int(np.argmin(dist2))
    cross = d[i, 0] * delta[i, 1] - d[i, 1] * delta[i, 0]
    offset = math.sqrt(dist2[i])
    if cross < 0.0:
        offset = -offset
    s = float(line.arclengths[i] + t[i] * line.segment_lengths[i])
    return offset, s


def project_arclength(
    line: Polyline, point, s_lo: float = -math.inf, s_hi: float = math.inf
) -> tuple[float, float]:
    """Like :func:`lateral_offset` but restricted to an arclength window.

    Used for progress tracking on self-crossing routes (roundabout loops),
    where a global nearest-segment search could snap backwards.
    """
    cum = line.arclengths
    first = int(np.clip(np.searchsorted(cum, s_lo) - 1, 0, len(cum) - 2))
    last = int(np.clip(np.searchsorted(cum, s_hi), 1, len(cum) - 1))
    sub = Polyline(line.points[first : last + 1])
    off, s = lateral_offset(sub, point)
    return off, s + float(cum[first])


def project_points(
    line: Polyline, points, s_lo: float = -math.inf, s_hi: float = math.inf
):
    """Vectorized window projection of many points onto a polyline.

    Returns (signed offsets, foot arclengths) arrays, one entry per point.
    """
    cum = line.arclengths
    first = int(np.clip(np.searchsorted(cum, s_lo) - 1, 0, len(cum) - 2))
    last = int(np.clip(np.searchsorted(cum, s_hi), 1, len(cum) - 1))
    pts = line.points[first : last + 1]
    p = np.atleast_2d(np.asarray(points, dtype=float))
    a = pts[:-1]
    d = np.diff(pts, axis=0)
    seg_len2 = np.einsum("ij,ij->i", d, d)
    # (N points) x (M segments)
    t = np.clip(
        ((p[:, None, :] - a[None, :, :]) * d[None, :, :]).sum(-1) / seg_len2[None, :],
        0.0,
        1.0,
    )
    foot = a[None, :, :] + t[..., None] * d[None, :, :]
    delta = p[:, None, :] - foot
    dist2 = np.einsum("nmj,nmj->nm", delta, delta)
    best = np.argmin(dist2, axis=1)
    rows = np.arange(p.shape[0])
    cross = (
        d[best, 0] * delta[rows, best, 1] - d[best, 1] * delta[rows, best, 0]
    )
    offsets = np.sqrt(dist2[rows, best])
    offsets[cross < 0.0] *= -1.0
    seg_len = np.sqrt(seg_len2)
    arcs = cum[first + best] + t[rows, best] * seg_len[best]
    return offsets, arcs
