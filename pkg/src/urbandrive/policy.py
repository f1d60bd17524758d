"""Planner interface, imitation metrics, a linear baseline, and the
socket client for externally served planners.

The built-in learner is deliberately tiny: ridge regression from a
block-pooled raster (plus speed and bias) straight to the 2H trajectory
coordinates. It is deterministic, trains in closed form, and exercises
the full observation-to-action path; stronger models plug in through the
same wire protocol used by :class:`RemotePlanner`.
"""

from __future__ import annotations

import math
import socket
import struct
from dataclasses import dataclass

import numpy as np

from .trajectory import DEFAULT_HORIZON, Trajectory

RASTER_SHAPE = (192, 192, 3)
RASTER_BYTES = 192 * 192 * 3
POOL = 8                                  # 8x8 block-mean pooling -> 24x24x3
FEATURE_DIM = (192 // POOL) ** 2 * 3 + 1  # pooled pixels + speed
REQUEST_MAGIC = b"BVP1"
RESPONSE_MAGIC = b"BVT1"


class EmptyDataset(Exception):
    """No usable frames to evaluate or train on."""


class MalformedResponse(Exception):
    """The remote planner broke the wire protocol."""


class PlannerTimeout(Exception):
    """The remote planner missed its per-tick deadline."""


class Planner:
    """Anything that maps (raster, ego speed) to a Trajectory.

    Planners that plan from ground truth instead of pixels set
    ``uses_raster = False`` and receive the world through ``observe()``
    before each ``plan()`` call.
    """

    uses_raster: bool = True

    def plan(self, raster: np.ndarray | None, ego_speed: float) -> Trajectory:
        raise NotImplementedError


def displacement_error(pred: Trajectory, truth: Trajectory, i: int) -> float:
    """Euclidean error at the i-th waypoint (1-based)."""
    dx, dy = pred.point(i) - truth.point(i)
    return math.hypot(dx, dy)


def loss(pred: Trajectory, truth: Trajectory) -> float:
    """Mean squared displacement over the horizon."""
    if pred.horizon != truth.horizon:
        raise ValueError("trajectories must share a horizon")
    diff = pred.points - truth.points
    return float(np.mean(np.sum(diff * diff, axis=1)))


def downsample_features(raster: np.ndarray, ego_speed: float) -> np.ndarray:
    """Pooled raster in [0, 1], flattened, with speed and bias appended."""
    if raster.shape != RASTER_SHAPE:
        raise ValueError(f"expected raster of shape {RASTER_SHAPE}")
    side = 192 // POOL
    pooled = (
        raster.reshape(side, POOL, side, POOL, 3).astype(np.float64).mean(axis=(1, 3))
        / 255.0
    )
    return np.concatenate([pooled.reshape(-1), [float(ego_speed)], [1.0]])


@dataclass(eq=False)
class ToyPolicy(Planner):
    """Linear map from pooled features to the 2H trajectory coordinates."""

    weights: np.ndarray  # (FEATURE_DIM + 1, 2H)

    def __post_init__(self):
        if self.weights.ndim != 2 or self.weights.shape[0] != FEATURE_DIM + 1:
            raise ValueError(f"weights must be ({FEATURE_DIM + 1}, 2H)")
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be finite")

    @property
    def horizon(self) -> int:
        return self.weights.shape[1] // 2

    def plan(self, raster: np.ndarray, ego_speed: float) -> Trajectory:
        features = downsample_features(raster, ego_speed)
        return Trajectory.from_flat(features @ self.weights)

    def save(self, path) -> None:
        np.savez(path, weights=self.weights)

    @classmethod
    def load(cls, path) -> "ToyPolicy":
        with np.load(path) as data:
            return cls(weights=data["weights"])


class ConstantVelocityPlanner(Planner):
    """Predicts straight-ahead motion at the current speed; the open-loop
    reference baseline."""

    def __init__(self, horizon: int = DEFAULT_HORIZON, dt: float = 0.1):
        self.horizon = horizon
        self.dt = dt

    def plan(self, raster, ego_speed: float) -> Trajectory:
        steps = np.arange(1, self.horizon + 1)
        return Trajectory(np.column_stack([steps * ego_speed * self.dt, np.zeros_like(steps, dtype=float)]))


def train_toy(dataset, l2: float = 1e-3) -> ToyPolicy:
    """Closed-form ridge regression on the untainted frames.

    The normal equations are normalized by the frame count, so duplicating
    the dataset leaves the solution unchanged.
    """
    frames = dataset.training_frames()
    if not frames:
        raise EmptyDataset("no untainted frames to train on")
    features = np.stack([downsample_features(f.raster, f.ego_speed) for f in frames])
    targets = np.stack([f.label.flat() for f in frames])
    n = len(frames)
    gram = features.T @ features / n + l2 * np.eye(features.shape[1])
    moment = features.T @ targets / n
    return ToyPolicy(weights=np.linalg.solve(gram, moment))


def average_displacement(planner, frames) -> float:
    """Mean displacement error of a planner over untainted dataset frames."""
    if hasattr(frames, "training_frames"):
        frames = frames.training_frames()
    frames = [f for f in frames if not f.noise_tainted]
    if not frames:
        raise EmptyDataset("no untainted frames to evaluate")
    total = 0.0
    for f in frames:
        pred = planner.plan(f.raster, f.ego_speed)
        diff = pred.points - f.label.points
        total += float(np.mean(np.hypot(diff[:, 0], diff[:, 1])))
    return total / len(frames)


# ---------------------------------------------------------------------------
# Wire protocol
# ---------------------------------------------------------------------------
# request:  b"BVP1" | ego_speed float64 LE | raster 110592 raw RGB bytes
# response: b"BVT1" | H uint32 LE | 2H float64 LE (x1, y1, ..., xH, yH) meters

def encode_request(ego_speed: float, raster: np.ndarray) -> bytes:
    data = np.ascontiguousarray(raster, dtype=np.uint8).tobytes()
    if len(data) != RASTER_BYTES:
        raise ValueError(f"raster must serialize to {RASTER_BYTES} bytes")
    return REQUEST_MAGIC + struct.pack("<d", float(ego_speed)) + data


def decode_response(payload: bytes) -> Trajectory:
    if payload[:4] != RESPONSE_MAGIC:
        raise MalformedResponse("bad response magic")
    (horizon,) = struct.unpack("<I", payload[4:8])
    coords = np.frombuffer(payload[8 : 8 + 16 * horizon], dtype="<f8")
    if coords.size != 2 * horizon or not np.all(np.isfinite(coords)):
        raise MalformedResponse("bad trajectory payload")
    return Trajectory.from_flat(coords)


def encode_response(traj: Trajectory) -> bytes:
    return (
        RESPONSE_MAGIC
        + struct.pack("<I", traj.horizon)
        + traj.flat().astype("<f8").tobytes()
    )


def _read_exact(sock: socket.socket, n: int) -> bytes:
    chunks = []
    remaining = n
    while remaining > 0:
        try:
            chunk = sock.recv(remaining)
        except socket.timeout as exc:
            raise PlannerTimeout("remote planner timed out") from exc
        if not chunk:
            raise MalformedResponse("connection closed mid-message")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


class RemotePlanner(Planner):
    """Client side of the wire protocol over one persistent connection."""

    def __init__(
        self,
        host: str,
        port: int,
        timeout: float = 1.0,
        horizon: int | None = DEFAULT_HORIZON,
    ):
        self.horizon = horizon
        self._sock = socket.create_connection((host, port), timeout=timeout)
        self._sock.settimeout(timeout)

    def plan(self, raster: np.ndarray, ego_speed: float) -> Trajectory:
        try:
            self._sock.sendall(encode_request(ego_speed, raster))
        except socket.timeout as exc:
            raise PlannerTimeout("remote planner timed out") from exc
        head = _read_exact(self._sock, 8)
        if head[:4] != RESPONSE_MAGIC:
            raise MalformedResponse("bad response magic")
        (horizon,) = struct.unpack("<I", head[4:8])
        if horizon == 0 or horizon > 10_000:
            raise MalformedResponse(f"implausible horizon {horizon}")
        body = _read_exact(self._sock, 16 * horizon)
        traj = decode_response(head + body)
        if self.horizon is not None and traj.horizon != self.horizon:
            raise MalformedResponse(
                f"expected horizon {self.horizon}, server sent {traj.horizon}"
            )
        return traj

    def close(self) -> None:
        self._sock.close()

    def __enter__(self) -> "RemotePlanner":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def remote_plan(endpoint: str, raster: np.ndarray, ego_speed: float, timeout: float = 1.0) -> Trajectory:
    """One-shot request against a ``host:port`` endpoint."""
    host, port = endpoint.rsplit(":", 1)
    with RemotePlanner(host, int(port), timeout=timeout, horizon=None) as planner:
        return planner.plan(raster, ego_speed)
