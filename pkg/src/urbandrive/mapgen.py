"""Programmatic construction of the bundled maps.

Both maps are closed circuits: every lane chain eventually feeds back into
itself, so scripted vehicles can drive indefinitely. The intersection
offers straight and right-turn movements only, which keeps scripted
traffic free of unprotected crossing conflicts. Connector endpoints are
snapped bitwise so consecutive lanes join without duplicate vertices.
"""

from __future__ import annotations

import json
import math

import numpy as np

from .world import MapData

LANE_WIDTH = 4.0


def _arc(center, radius, start_deg, sweep_deg, max_chord=1.0):
    """Sampled circular arc; positive sweep is counter-clockwise."""
    length = abs(math.radians(sweep_deg)) * radius
    n = max(2, int(math.ceil(length / max_chord)) + 1)
    ang = np.radians(np.linspace(start_deg, start_deg + sweep_deg, n))
    return np.column_stack(
        [center[0] + radius * np.cos(ang), center[1] + radius * np.sin(ang)]
    )


def _hermite(p0, heading0_deg, p1, heading1_deg, n=16):
    """Cubic Hermite blend between two posed endpoints."""
    p0 = np.asarray(p0, float)
    p1 = np.asarray(p1, float)
    chord = float(np.hypot(*(p1 - p0)))
    m0 = chord * np.array(
        [math.cos(math.radians(heading0_deg)), math.sin(math.radians(heading0_deg))]
    )
    m1 = chord * np.array(
        [math.cos(math.radians(heading1_deg)), math.sin(math.radians(heading1_deg))]
    )
    t = np.linspace(0.0, 1.0, n)[:, None]
    h00 = 2 * t**3 - 3 * t**2 + 1
    h10 = t**3 - 2 * t**2 + t
    h01 = -2 * t**3 + 3 * t**2
    h11 = t**3 - t**2
    return h00 * p0 + h10 * m0 + h01 * p1 + h11 * m1


def _snap(points, first=None, last=None):
    pts = np.array(points, dtype=float)
    if first is not None:
        pts[0] = first
    if last is not None:
        pts[-1] = last
    return pts


def _lane(lane_id, points, successors, left="yellow", right="white", width=LANE_WIDTH):
    return {
        "id": lane_id,
        "centerline": [[float(x), float(y)] for x, y in points],
        "width": width,
        "marking_left": left,
        "marking_right": right,
        "successors": list(successors),
    }


def _rot90(points):
    pts = np.asarray(points, float)
    return np.column_stack([-pts[:, 1], pts[:, 0]])


def intersection_map() -> dict:
    """Four-way signalized intersection with recirculating corner loops.

    Arms reach +/-30 m, the junction box is +/-8 m, and each outgoing arm
    loops clockwise (radius 28) back into the next approach.
    """
    arm, box, off = 30.0, 8.0, LANE_WIDTH / 2.0
    dirs = ["e", "n", "w", "s"]

    # Eastbound prototypes; the other three arms are 90-degree rotations.
    proto = {
        "in": np.array([[-arm, -off], [-box, -off]]),
        "out": np.array([[box, -off], [arm, -off]]),
        "straight": np.array([[-box, -off], [box, -off]]),
        "right": _snap(
            _arc((-box, -box), box - off, 90.0, -90.0),
            first=(-box, -off),
            last=(-off, -box),
        ),
        # clockwise 270-degree arc from the end of e_out to the start of n_in
        "loop": _snap(
            _arc((arm, -arm), arm - off, 90.0, -270.0),
            first=(arm, -off),
            last=(off, -arm),
        ),
    }

    lanes = []
    geoms = {}
    for k, d in enumerate(dirs):
        for key, pts in proto.items():
            g = pts
            for _ in range(k):
                g = _rot90(g)
            geoms[f"{d}_{key}"] = g
    succ = {}
    for k, d in enumerate(dirs):
        nxt = dirs[(k + 1) % 4]   # arm fed by this arm's loop
        prv = dirs[(k - 1) % 4]   # arm reached by this arm's right turn
        succ[f"{d}_in"] = [f"{d}_straight", f"{d}_right"]
        succ[f"{d}_straight"] = [f"{d}_out"]
        succ[f"{d}_right"] = [f"{prv}_out"]
        succ[f"{d}_out"] = [f"{d}_loop"]
        succ[f"{d}_loop"] = [f"{nxt}_in"]

    for name, g in geoms.items():
        interior = name.endswith("straight") or name.endswith("right")
        lanes.append(
            _lane(
                name,
                g,
                succ[name],
                left="white" if interior else "yellow",
                right="white",
            )
        )

    lights = []
    stops = {"e": (-box, -off), "n": (off, -box), "w": (box, off), "s": (-off, box)}
    for d in dirs:
        lights.append(
            {
                "id": f"light_{d}",
                "stop_point": [float(stops[d][0]), float(stops[d][1])],
                "governed_lanes": [f"{d}_in"],
                "cycle": [8.0, 2.0, 10.0],
                "phase_offset": 0.0 if d in ("e", "w") else 10.0,
            }
        )

    spawns = []
    for d in dirs:
        spawns += [[f"{d}_in", 2.0], [f"{d}_in", 12.0], [f"{d}_out", 6.0]]
        spawns += [[f"{d}_loop", 40.0], [f"{d}_loop", 90.0]]
    return {"lanes": lanes, "traffic_lights": lights, "spawn_points": spawns}


def roundabout_map() -> dict:
    """Four-arm roundabout: a segmented counter-clockwise ring of radius 16
    with tangent-blended entries/exits and recirculating outer loops.
    """
    ring_r = 16.0
    off = LANE_WIDTH / 2.0 + 1.0   # arm lane offset from the arm axis
    arm_far, arm_near = 34.0, 22.0

    def ring_point(deg):
        a = math.radians(deg)
        return np.array([ring_r * math.cos(a), ring_r * math.sin(a)])

    node_angles = [30, 60, 120, 150, 210, 240, 300, 330]
    nodes = {a: ring_point(a) for a in node_angles}

    lanes = []
    # Ring segments between consecutive nodes (counter-clockwise).
    seg_names = {}
    for i, a in enumerate(node_angles):
        b = node_angles[(i + 1) % len(node_angles)]
        sweep = (b - a) % 360
        name = f"ring_{a}"
        seg_names[a] = name
        pts = _snap(_arc((0.0, 0.0), ring_r, a, sweep), first=nodes[a], last=nodes[b])
        lanes.append(_lane(name, pts, [], left="yellow", right="white"))

    arm_defs = []
    for k in range(4):
        phi = 90 * k
        entry_node = (phi + 30) % 360
        exit_node = (phi - 30) % 360
        rot = np.eye(2)
        for _ in range(k):
            rot = np.array([[0.0, -1.0], [1.0, 0.0]]) @ rot
        in_pts = (rot @ np.array([[arm_far, off], [arm_near, off]]).T).T
        out_pts = (rot @ np.array([[arm_near, -off], [arm_far, -off]]).T).T
        entry = _snap(
            _hermite(in_pts[-1], 180 + phi, nodes[entry_node], entry_node + 90),
            first=in_pts[-1],
            last=nodes[entry_node],
        )
        exit_ = _snap(
            _hermite(nodes[exit_node], exit_node + 90, out_pts[0], phi),
            first=nodes[exit_node],
            last=out_pts[0],
        )
        # Outer loop: counter-clockwise 270-degree arc from this arm's exit
        # road to the next arm's approach road.
        loop_r = arm_far + off
        loop_center = rot @ np.array([arm_far, arm_far])
        loop = _snap(
            _arc(loop_center, loop_r, -90.0 + phi, 270.0),
            first=out_pts[-1],
            last=rot @ np.array([-off, arm_far]),
        )
        arm_defs.append((k, entry_node, exit_node, in_pts, out_pts, entry, exit_, loop))

    for k, entry_node, exit_node, in_pts, out_pts, entry, exit_, loop in arm_defs:
        nxt_in = f"in_{(k + 1) % 4}"
        lanes.append(_lane(f"in_{k}", in_pts, [f"entry_{k}"]))
        lanes.append(_lane(f"entry_{k}", entry, [seg_names[entry_node]], left="white"))
        lanes.append(_lane(f"exit_{k}", exit_, [f"out_{k}"], left="white"))
        lanes.append(_lane(f"out_{k}", out_pts, [f"loop_{k}"]))
        lanes.append(_lane(f"loop_{k}", loop, [nxt_in]))

    # Ring successor wiring: continue around, or take the exit at exit nodes.
    arm_exit_at = {(90 * k - 30) % 360: f"exit_{k}" for k in range(4)}
    for i, a in enumerate(node_angles):
        b = node_angles[(i + 1) % len(node_angles)]
        succ = [seg_names[b]]
        if b in arm_exit_at:
            succ.append(arm_exit_at[b])
        next(l for l in lanes if l["id"] == seg_names[a])["successors"] = succ

    spawns = []
    for k in range(4):
        spawns += [[f"in_{k}", 2.0], [f"in_{k}", 8.0], [f"out_{k}", 4.0]]
        spawns += [[f"loop_{k}", 40.0], [f"loop_{k}", 110.0]]
    for a in (60, 150, 240, 330):
        spawns.append([f"ring_{a}", 4.0])
    return {"lanes": lanes, "traffic_lights": [], "spawn_points": spawns}


def straight_map(length: float = 300.0) -> dict:
    """Minimal single-lane straight road, used by tests and demos."""
    lanes = [
        _lane("main", [[0.0, 0.0], [length, 0.0]], []),
    ]
    return {"lanes": lanes, "traffic_lights": [], "spawn_points": [["main", 2.0]]}


BUILDERS = {
    "intersection": intersection_map,
    "roundabout": roundabout_map,
}


def build(name: str) -> MapData:
    return MapData.from_dict(BUILDERS[name]())


def write_bundled_maps(directory) -> None:
    from pathlib import Path

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, builder in BUILDERS.items():
        data = builder()
        MapData.from_dict(data)  # validate before writing
        with open(directory / f"{name}.json", "w") as f:
            json.dump(data, f, indent=1)
            f.write("\n")


if __name__ == "__main__":
    from pathlib import Path

    write_bundled_maps(Path(__file__).parent / "maps")
