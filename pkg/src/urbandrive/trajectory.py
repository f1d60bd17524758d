"""The planner action type: H future waypoints in the ego local frame."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_HORIZON = 10


@dataclass(frozen=True, eq=False)
class Trajectory:
    """H future (x, y) points, one per upcoming tick, in the ego frame."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError("trajectory needs an (H, 2) array")
        if not np.all(np.isfinite(pts)):
            raise ValueError("trajectory points must be finite")
        pts = pts.copy()
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def horizon(self) -> int:
        return self.points.shape[0]

    def point(self, i: int) -> np.ndarray:
        """1-based access: point(1) is the first future waypoint."""
        if not 1 <= i <= self.horizon:
            raise IndexError(f"waypoint index {i} outside 1..{self.horizon}")
        return self.points[i - 1]

    def flat(self) -> np.ndarray:
        """(x1, y1, ..., xH, yH) — the layout used on disk and on the wire."""
        return self.points.reshape(-1)

    @classmethod
    def from_flat(cls, values) -> "Trajectory":
        arr = np.asarray(values, dtype=float)
        return cls(arr.reshape(-1, 2))
