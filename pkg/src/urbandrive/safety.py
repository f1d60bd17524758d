"""Safe-set safety filter for the (accel, steer) command.

A scalar safety index combines a shaped (ellipse-metric) distance to each
surrounding vehicle with its closing rate. Whenever the index is
non-negative for some vehicle, the filter derives a linear constraint on
the control that forces the index to decay, intersects the constraints
with the control box, and projects the tracker's command onto that
polytope under a weighted quadratic objective. The projection is solved
exactly by enumerating the finitely many candidate optima of a 2D QP.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .world import Control, VehicleState, WorldState


class CoincidentPositions(Exception):
    """Ego and obstacle centers coincide; the shaped distance is undefined."""


class DegenerateRow(Exception):
    """The active constraint gives the control no authority at all."""


class InfeasibleProjection(Exception):
    """The constraint polytope is empty: no command can keep the index decaying."""


@dataclass(frozen=True)
class SafetyParams:
    safe_level: float = 2.0        # index offset: boundary sits at d^2 + approach term
    approach_time: float = 0.5     # seconds of closing-rate anticipation
    ellipse_ratio: float = 2.0     # major/minor axis ratio of the distance metric
    ellipse_major: float = 5.0     # meters at which d = 1 along the obstacle heading
    margin: float = 0.1            # required index decay rate when active (1/s)
    weight_accel: float = 1.0
    weight_steer: float = 10.0
    weight_cross: float = 0.0
    wheelbase: float = 2.5
    accel_max: float = 4.0
    steer_max: float = 0.6
    sensing_radius: float = 30.0

    def __post_init__(self):
        if min(self.safe_level, self.approach_time, self.ellipse_major, self.margin) <= 0:
            raise ValueError("safety parameters must be positive")
        if self.ellipse_ratio < 1.0:
            raise ValueError("ellipse ratio must be >= 1")
        if (
            self.weight_accel <= 0
            or self.weight_steer <= 0
            or self.weight_cross**2 >= self.weight_accel * self.weight_steer
        ):
            raise ValueError("control weight matrix must be symmetric positive-definite")


@dataclass(frozen=True)
class HalfPlane:
    """One linear control constraint: accel_coef*a + steer_coef*s <= limit."""

    accel_coef: float
    steer_coef: float
    limit: float

    def violated_by(self, accel: float, steer: float, slack: float = 1e-9) -> bool:
        return self.accel_coef * accel + self.steer_coef * steer > self.limit + slack


def _ellipse_matrix(obstacle_yaw: float, params: SafetyParams):
    """Symmetric 2x2 metric whose unit level set is the obstacle ellipse."""
    k1 = 1.0 / params.ellipse_major**2
    k2 = params.ellipse_ratio**2 / params.ellipse_major**2
    c, s = math.cos(obstacle_yaw), math.sin(obstacle_yaw)
    q11 = c * c * k1 + s * s * k2
    q12 = c * s * (k1 - k2)
    q22 = s * s * k1 + c * c * k2
    # derivative of each entry with respect to the obstacle yaw
    dq11 = 2.0 * c * s * (k2 - k1)
    dq12 = (c * c - s * s) * (k1 - k2)
    dq22 = 2.0 * c * s * (k1 - k2)
    return (q11, q12, q22), (dq11, dq12, dq22)


def shaped_distance(ego: VehicleState, obs: VehicleState, params: SafetyParams) -> float:
    """Ellipse-metric distance; 1.0 on the ellipse around the obstacle."""
    (q11, q12, q22), _ = _ellipse_matrix(obs.pose.yaw, params)
    dx = ego.pose.x - obs.pose.x
    dy = ego.pose.y - obs.pose.y
    d2 = q11 * dx * dx + 2.0 * q12 * dx * dy + q22 * dy * dy
    if d2 < 1e-18:
        raise CoincidentPositions("ego and obstacle positions coincide")
    return math.sqrt(d2)


def _index_terms(ego: VehicleState, obs: VehicleState, params: SafetyParams):
    """Safety index plus its gradients w.r.t. both (x, y, yaw, speed) states."""
    (q11, q12, q22), (dq11, dq12, dq22) = _ellipse_matrix(obs.pose.yaw, params)
    dx = ego.pose.x - obs.pose.x
    dy = ego.pose.y - obs.pose.y
    d2 = q11 * dx * dx + 2.0 * q12 * dx * dy + q22 * dy * dy
    if d2 < 1e-18:
        raise CoincidentPositions("ego and obstacle positions coincide")
    d = math.sqrt(d2)
    gx = q11 * dx + q12 * dy          # (Q dp)
    gy = q12 * dx + q22 * dy
    ce, se = math.cos(ego.pose.yaw), math.sin(ego.pose.yaw)
    co, so = math.cos(obs.pose.yaw), math.sin(obs.pose.yaw)
    rvx = ego.speed * ce - obs.speed * co
    rvy = ego.speed * se - obs.speed * so
    hx = q11 * rvx + q12 * rvy        # (Q dv)
    hy = q12 * rvx + q22 * rvy
    cval = dx * hx + dy * hy          # dp' Q dv
    ddot = cval / d
    alpha = params.approach_time
    phi = params.safe_level - d2 - alpha * ddot

    # chain rule: dphi/dz = -(dd2/dz) - alpha * (dc/dz - ddot * dd/dz) / d
    def phi_grad(dd2_dz, dc_dz):
        dd_dz = dd2_dz / (2.0 * d)
        return -dd2_dz - alpha * (dc_dz - ddot * dd_dz) / d

    # ego position
    gpx = phi_grad(2.0 * gx, hx)
    gpy = phi_grad(2.0 * gy, hy)
    # ego yaw and speed (enter only through the relative velocity)
    dc_dyaw = gx * (-ego.speed * se) + gy * (ego.speed * ce)
    dc_dv = gx * ce + gy * se
    gyaw = phi_grad(0.0, dc_dyaw)
    gv = phi_grad(0.0, dc_dv)
    grad_ego = (gpx, gpy, gyaw, gv)

    # obstacle position (opposite sign of ego position terms)
    opx = phi_grad(-2.0 * gx, -hx)
    opy = phi_grad(-2.0 * gy, -hy)
    # obstacle yaw: metric rotation plus relative-velocity dependence
    dd2_dyawj = dq11 * dx * dx + 2.0 * dq12 * dx * dy + dq22 * dy * dy
    dqv_x = dq11 * rvx + dq12 * rvy
    dqv_y = dq12 * rvx + dq22 * rvy
    dc_dyawj = (dx * dqv_x + dy * dqv_y) + (
        gx * (obs.speed * so) + gy * (-obs.speed * co)
    )
    oyaw = phi_grad(dd2_dyawj, dc_dyawj)
    dc_dvj = gx * (-co) + gy * (-so)
    ov = phi_grad(0.0, dc_dvj)
    grad_obs = (opx, opy, oyaw, ov)
    return phi, grad_ego, grad_obs


def safety_index(ego: VehicleState, obs: VehicleState, params: SafetyParams) -> float:
    """Scalar danger measure; non-negative values demand filtering."""
    try:
        phi, _, _ = _index_terms(ego, obs, params)
    except CoincidentPositions:
        return math.inf
    return phi


def index_gradients(ego: VehicleState, obs: VehicleState, params: SafetyParams):
    """Analytic gradients of the index w.r.t. ego and obstacle states."""
    _, grad_ego, grad_obs = _index_terms(ego, obs, params)
    return grad_ego, grad_obs


def constraint(
    ego: VehicleState, obs: VehicleState, params: SafetyParams
) -> HalfPlane | None:
    """Linear control constraint forcing the index to decay, or None when safe.

    Uses the control-affine ego model (small-angle steering) so the index
    rate splits into a drift part and a control-linear part.
    """
    phi, grad_ego, grad_obs = _index_terms(ego, obs, params)
    if phi < 0.0:
        return None
    gpx, gpy, gyaw, gv = grad_ego
    opx, opy, _, _ = grad_obs
    v = ego.speed
    ce, se = math.cos(ego.pose.yaw), math.sin(ego.pose.yaw)
    co, so = math.cos(obs.pose.yaw), math.sin(obs.pose.yaw)
    accel_coef = gv
    steer_coef = gyaw * v / params.wheelbase
    drift = gpx * v * ce + gpy * v * se
    obstacle_flow = opx * obs.speed * co + opy * obs.speed * so
    limit = -params.margin - obstacle_flow - drift
    if math.hypot(accel_coef, steer_coef) < 1e-9:
        if abs(accel_coef) < 1e-9:
            raise DegenerateRow("control has no authority over the safety index")
        steer_coef = 0.0
    return HalfPlane(accel_coef, steer_coef, limit)


def _weight_matrix(params_or_w):
    if isinstance(params_or_w, SafetyParams):
        return (
            params_or_w.weight_accel,
            params_or_w.weight_cross,
            params_or_w.weight_steer,
        )
    w = params_or_w
    return float(w[0][0]), float(w[0][1]), float(w[1][1])


def qp_project(
    u: Control,
    constraints: list[HalfPlane],
    weights,
    accel_max: float = 4.0,
    steer_max: float = 0.6,
) -> Control:
    """Weighted projection of a command onto the constraint polytope.

    Exact combinatorial solve: the optimum of a strictly convex 2D QP over
    a polytope is the command itself, the weighted projection onto one
    active line, or the vertex of two lines; all candidates are enumerated
    and the feasible one with least objective wins.

    Raises InfeasibleProjection when the polytope is empty.
    """
    w11, w12, w22 = _weight_matrix(weights)
    rows = [(h.accel_coef, h.steer_coef, h.limit) for h in constraints]
    rows += [
        (1.0, 0.0, accel_max),
        (-1.0, 0.0, accel_max),
        (0.0, 1.0, steer_max),
        (0.0, -1.0, steer_max),
    ]

    def feasible(a: float, s: float) -> bool:
        return all(la * a + ls * s <= b + 1e-9 for la, ls, b in rows)

    if feasible(u.accel, u.steer):
        return u

    det_w = w11 * w22 - w12 * w12
    i11, i12, i22 = w22 / det_w, -w12 / det_w, w11 / det_w  # W^-1

    def objective(a: float, s: float) -> float:
        da, ds = a - u.accel, s - u.steer
        return 0.5 * (w11 * da * da + 2.0 * w12 * da * ds + w22 * ds * ds)

    candidates: list[tuple[float, float]] = []
    for la, ls, b in rows:
        # projection of u onto the line la*a + ls*s = b under the W metric
        wla = i11 * la + i12 * ls
        wls = i12 * la + i22 * ls
        denom = la * wla + ls * wls
        if denom < 1e-15:
            continue
        scale = (b - (la * u.accel + ls * u.steer)) / denom
        candidates.append((u.accel + wla * scale, u.steer + wls * scale))
    for i in range(len(rows)):
        for j in range(i + 1, len(rows)):
            la1, ls1, b1 = rows[i]
            la2, ls2, b2 = rows[j]
            det = la1 * ls2 - la2 * ls1
            if abs(det) < 1e-12:
                continue
            candidates.append(((b1 * ls2 - b2 * ls1) / det, (la1 * b2 - la2 * b1) / det))

    best = None
    best_obj = math.inf
    for a, s in candidates:
        if not feasible(a, s):
            continue
        obj = objective(a, s)
        if obj < best_obj:
            best, best_obj = (a, s), obj
    if best is None:
        raise InfeasibleProjection("constraint polytope is empty")
    return Control(best[0], best[1])


def safe_control(
    world: WorldState, u: Control, params: SafetyParams
) -> tuple[Control, bool]:
    """Filter a command against every vehicle inside the sensing radius.

    Returns the (possibly modified) command and whether the filter engaged.
    Unresolvable situations (empty polytope, zero-authority constraint,
    coincident positions) fall back to full braking.
    """
    ego = world.ego
    braking = Control(-params.accel_max, 0.0)
    rows: list[HalfPlane] = []
    for npc in world.npcs:
        dx = npc.pose.x - ego.pose.x
        dy = npc.pose.y - ego.pose.y
        if dx * dx + dy * dy > params.sensing_radius**2:
            continue
        try:
            row = constraint(ego, npc, params)
        except (CoincidentPositions, DegenerateRow):
            return braking, True
        if row is not None:
            rows.append(row)
    if not rows:
        return u, False
    try:
        projected = qp_project(u, rows, params, params.accel_max, params.steer_max)
    except InfeasibleProjection:
        return braking, True
    return projected, True
