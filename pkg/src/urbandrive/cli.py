"""Command-line entry points: collect, train-toy, eval-open, eval-closed, render.

A JSON config file can override tracker gains, safety parameters and the
world defaults; see README for the schema. All commands exit 0 unless an
internal error occurs.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import evaluation, expert_data, policy
from .birdview import RenderConfig, render, save_png
from .safety import SafetyParams
from .tracking import PidState, TrackerConfig
from .world import WorldConfig, load_map, make_world, step_world, Control


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path) as f:
        return json.load(f)


def _tracker_from_config(cfg: dict, world_cfg: WorldConfig) -> TrackerConfig:
    t = cfg.get("tracker", {})
    def pid(key, default):
        gains = t.get(key)
        if gains is None:
            return default
        return PidState(
            kp=float(gains.get("kp", default.kp)),
            ki=float(gains.get("ki", default.ki)),
            kd=float(gains.get("kd", default.kd)),
            integral_limit=float(gains.get("integral_limit", default.integral_limit)),
        )
    base = TrackerConfig(dt=world_cfg.dt, accel_max=world_cfg.accel_max, steer_max=world_cfg.steer_max)
    return TrackerConfig(
        target_index=int(t.get("target_index", base.target_index)),
        dt=base.dt,
        accel_max=base.accel_max,
        steer_max=base.steer_max,
        longitudinal=pid("longitudinal", base.longitudinal),
        lateral=pid("lateral", base.lateral),
    )


def _safety_from_config(cfg: dict, world_cfg: WorldConfig) -> SafetyParams:
    base = SafetyParams(
        wheelbase=world_cfg.wheelbase,
        accel_max=world_cfg.accel_max,
        steer_max=world_cfg.steer_max,
    )
    overrides = cfg.get("safety", {})
    return dataclasses.replace(base, **overrides) if overrides else base


def _world_from_config(cfg: dict) -> WorldConfig:
    overrides = cfg.get("world", {})
    return dataclasses.replace(WorldConfig(), **overrides) if overrides else WorldConfig()


def _make_planner(spec: str, horizon: int, world_cfg: WorldConfig):
    if spec == "expert":
        return expert_data.ExpertPlanner(horizon)
    if spec.startswith("toy:"):
        return policy.ToyPolicy.load(spec[4:])
    if spec.startswith("remote:"):
        host, port = spec[7:].rsplit(":", 1)
        return policy.RemotePlanner(host, int(port), horizon=horizon)
    raise SystemExit(f"unknown policy spec {spec!r} (use expert, toy:FILE or remote:HOST:PORT)")


def cmd_collect(args) -> int:
    sched = expert_data.NoiseSchedule() if not args.no_noise else expert_data.NoiseSchedule.disabled()
    dataset = expert_data.collect(
        args.map,
        seed=args.seed,
        duration=args.duration,
        sched=sched,
        horizon=args.horizon,
        npc_count=args.npcs,
    )
    dataset.save(args.out)
    print(
        f"collected {len(dataset.frames)} frames "
        f"({dataset.tainted_count} noise-tainted) -> {args.out}"
    )
    return 0


def cmd_train_toy(args) -> int:
    dataset = expert_data.Dataset.load(args.data)
    model = policy.train_toy(dataset, l2=args.l2)
    model.save(args.out)
    ade = policy.average_displacement(model, dataset)
    print(f"trained toy policy on {len(dataset.training_frames())} frames, train ADE {ade:.4f} m -> {args.out}")
    return 0


def cmd_eval_open(args) -> int:
    dataset = expert_data.Dataset.load(args.data)
    world_cfg = _world_from_config(_load_config(args.config))
    planner = _make_planner(args.policy, dataset.horizon, world_cfg)
    if args.policy == "expert":
        raise SystemExit("open-loop evaluation needs a raster-driven policy (toy or remote)")
    ade = policy.average_displacement(planner, dataset)
    baseline = policy.average_displacement(
        policy.ConstantVelocityPlanner(dataset.horizon, dataset.dt), dataset
    )
    print(f"ADE {ade:.4f} m over {len(dataset.training_frames())} frames "
          f"(constant-velocity baseline {baseline:.4f} m)")
    if args.report:
        with open(args.report, "w") as f:
            json.dump({"ade_m": ade, "baseline_ade_m": baseline}, f, indent=1)
    return 0


def cmd_eval_closed(args) -> int:
    cfg = _load_config(args.config)
    world_cfg = _world_from_config(cfg)
    scenario = evaluation.Scenario.load(args.scenario)
    planner = _make_planner(args.policy, args.horizon, world_cfg)
    logs = []
    for episode in range(args.episodes):
        sc = dataclasses.replace(scenario, seed=scenario.seed + episode)
        log = evaluation.run_episode(
            sc,
            planner,
            tracker_cfg=_tracker_from_config(cfg, world_cfg),
            safety_params=_safety_from_config(cfg, world_cfg),
            safety_on=not args.no_safety,
            world_cfg=world_cfg,
        )
        logs.append(log)
        print(f"episode {episode}: {log.outcome} ({log.distance_driven:.1f} m, {log.ticks} ticks)")
    counts = evaluation.event_counts(logs)
    print(
        f"success rate {evaluation.success_rate(logs):.2f}, "
        f"collisions {counts['collision']}, out-of-lane {counts['out_of_lane']}"
    )
    if args.report:
        evaluation.write_report(args.report, scenario, logs)
    if hasattr(planner, "close"):
        planner.close()
    return 0


def cmd_render(args) -> int:
    map_data = load_map(args.map)
    world = make_world(map_data, seed=args.seed, npc_count=args.npcs)
    tracker = TrackerConfig()
    history = []
    rc = RenderConfig()
    buffer_len = 1 + rc.history_steps * rc.history_stride
    for _ in range(args.tick + 1):
        history.append(world)
        if len(history) > buffer_len:
            history.pop(0)
        traj = expert_data.expert_plan(world, world.ego.route)
        from .tracking import track

        world = step_world(world, track(traj, world.ego.speed, tracker))
    img = render(history, history[-1].ego.route, rc)
    save_png(img, args.out)
    print(f"wrote {args.out}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="urbandrive", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("collect", help="record an expert driving dataset")
    p.add_argument("--map", required=True, help="bundled map name or JSON path")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--duration", type=float, required=True, help="seconds of driving")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--horizon", type=int, default=10)
    p.add_argument("--npcs", type=int, default=8)
    p.add_argument("--no-noise", action="store_true", help="disable noise augmentation")
    p.set_defaults(func=cmd_collect)

    p = sub.add_parser("train-toy", help="fit the linear baseline policy")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--l2", type=float, default=1e-3)
    p.set_defaults(func=cmd_train_toy)

    p = sub.add_parser("eval-open", help="open-loop displacement error on a dataset")
    p.add_argument("--policy", required=True, help="toy:FILE or remote:HOST:PORT")
    p.add_argument("--data", required=True)
    p.add_argument("--report")
    p.add_argument("--config")
    p.set_defaults(func=cmd_eval_open)

    p = sub.add_parser("eval-closed", help="closed-loop scenario evaluation")
    p.add_argument("--scenario", required=True, help="scenario JSON path")
    p.add_argument("--policy", required=True, help="expert, toy:FILE or remote:HOST:PORT")
    p.add_argument("--episodes", type=int, default=1)
    p.add_argument("--no-safety", action="store_true")
    p.add_argument("--report")
    p.add_argument("--config")
    p.add_argument("--horizon", type=int, default=10)
    p.set_defaults(func=cmd_eval_closed)

    p = sub.add_parser("render", help="render one bird-view frame to PNG")
    p.add_argument("--map", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tick", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--npcs", type=int, default=8)
    p.set_defaults(func=cmd_render)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
