"""Command-line harness: simulate, optimize, evaluate, selftest.

Exit codes: 0 success, 1 divergence during optimization, 2 invalid input.
"""

from __future__ import annotations

import argparse
import glob
import math
import os
import sys
from dataclasses import replace

import numpy as np

from .config import RunConfig, apply_setting, config_text, load_config
from .evaluation import Trajectory, ate_rmse, voxel_occupancy
from .geometry import Pose, compose, invert, read_tum, write_tum
from .ioutil import atomic_write_text
from .robust_kernel import HuberKernel
from .solver import DivergedError, lm_iterate, window_snapshot
from .synthetic import (
    SceneSpec,
    generate,
    load_scene_spec,
    read_frame_points,
    save_scene,
)
from .voxel_map import HAVoxelMap


def _build_config(args) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        cfg = load_config(args.config, cfg)
    for setting in getattr(args, "set", None) or []:
        if "=" not in setting:
            raise ValueError(f"--set expects key=value, got {setting!r}")
        key, raw = setting.split("=", 1)
        cfg = apply_setting(cfg, key, raw)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def cmd_simulate(args) -> int:
    spec = SceneSpec()
    if args.spec:
        spec = load_scene_spec(args.spec)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    for setting in args.set or []:
        if "=" not in setting:
            raise ValueError(f"--set expects key=value, got {setting!r}")
        key, raw = setting.split("=", 1)
        from .synthetic import parse_scene_spec

        spec = parse_scene_spec(f"{key} = {raw}", spec)
    scene = generate(spec)
    save_scene(scene, args.out)
    print(f"scene with {spec.frames} frames / {spec.planes} planes written to {args.out}")
    return 0


def _rotation_angle_deg(a: Pose, b: Pose) -> float:
    rel = a.rotation().T @ b.rotation()
    cos = max(-1.0, min(1.0, (np.trace(rel) - 1.0) / 2.0))
    return math.degrees(math.acos(cos))


def _keyframe_due(cfg: RunConfig, last_stamp, last_pose, stamp, pose) -> bool:
    if last_stamp is None:
        return True
    if stamp - last_stamp <= cfg.keyframe_th_time:
        return False
    moved = np.linalg.norm(pose.t - last_pose.t) > cfg.keyframe_th_pos
    turned = _rotation_angle_deg(last_pose, pose) > cfg.keyframe_th_deg
    return moved or turned


def run_optimize(scene_dir, out_dir, cfg: RunConfig,
                 dump_windows: bool = False) -> tuple[Trajectory, list]:
    """Sliding-window pipeline: insert, fit, build, solve, slide.

    Reads frames/ and init.tum from scene_dir; returns the estimated
    trajectory and the per-window solve reports.
    """
    frame_files = sorted(glob.glob(os.path.join(scene_dir, "frames", "*.xyz")))
    init_path = os.path.join(scene_dir, "init.tum")
    if not frame_files or not os.path.exists(init_path):
        raise FileNotFoundError(f"{scene_dir} must contain frames/*.xyz and init.tum")
    init_rows = read_tum(init_path)
    if len(init_rows) != len(frame_files):
        raise ValueError(f"{len(frame_files)} frame files but {len(init_rows)} init poses")

    kernel = HuberKernel(cfg.robust_delta) if cfg.robust_kernel == "huber" else None
    lm_cfg = cfg.lm_config()
    vmap = HAVoxelMap(cfg.voxel_config())
    os.makedirs(out_dir, exist_ok=True)

    correction = Pose.identity()  # map-from-odometry correction, refreshed per solve
    estimates: dict[int, Pose] = {}
    stamps: dict[int, float] = {}
    window_ids: list[int] = []
    reports = []
    optimized_once = False
    last_kf = None  # (stamp, pose) of the last accepted keyframe

    def optimize_window() -> None:
        nonlocal correction, optimized_once
        frames = [(fid, estimates[fid]) for fid in window_ids]
        window = vmap.build_window(frames)
        new_window, report = lm_iterate(window, kernel, lm_cfg)
        if dump_windows:
            snap = os.path.join(out_dir, f"window_{len(reports):04d}.txt")
            atomic_write_text(snap, window_snapshot(window))
        for k, fid in enumerate(window_ids):
            estimates[fid] = new_window.poses[k]
        vmap.update_landmarks(new_window)
        reports.append(report)
        optimized_once = True
        vmap.slide(new_window)
        window_ids.pop(0)

    for fid, path in enumerate(frame_files):
        stamp, odo_pose = init_rows[fid]
        if cfg.keyframe_gating and not _keyframe_due(
                cfg, *(last_kf or (None, None)), stamp, odo_pose):
            continue
        last_kf = (stamp, odo_pose)
        predicted = compose(correction, odo_pose)
        points = read_frame_points(path)
        vmap.insert_frame(points, predicted, fid)
        vmap.fit_pending()
        estimates[fid] = predicted
        stamps[fid] = stamp
        window_ids.append(fid)
        if len(window_ids) == cfg.window_size:
            newest = window_ids[-1]
            optimize_window()
            correction = compose(estimates[newest], invert(init_rows[newest][1]))

    if window_ids and not optimized_once:
        optimize_window()  # stream shorter than the window; refine once

    rows = sorted(estimates)
    traj = Trajectory(np.array([stamps[fid] for fid in rows]),
                      tuple(estimates[fid] for fid in rows))
    return traj, reports


def cmd_optimize(args) -> int:
    cfg = _build_config(args)
    try:
        traj, reports = run_optimize(args.scene, args.out, cfg,
                                     dump_windows=args.dump_windows)
    except DivergedError as exc:
        report_path = os.path.join(args.out, "report.json")
        os.makedirs(args.out, exist_ok=True)
        atomic_write_text(report_path, exc.report.to_json() + "\n")
        print(f"optimization diverged: {exc}", file=sys.stderr)
        return 1
    write_tum(os.path.join(args.out, "est.tum"), zip(traj.times, traj.poses))
    report_lines = [r.to_json() for r in reports]
    atomic_write_text(os.path.join(args.out, "report.json"),
                      "[\n" + ",\n".join(report_lines) + "\n]\n")
    atomic_write_text(os.path.join(args.out, "config.cfg"), config_text(cfg))
    total_iters = sum(r.iterations for r in reports)
    print(f"optimized {len(traj.poses)} keyframes over {len(reports)} windows "
          f"({total_iters} LM iterations); wrote {os.path.join(args.out, 'est.tum')}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _build_config(args)
    est = Trajectory.from_tum(args.estimate)
    ref = Trajectory.from_tum(args.reference)
    rmse = ate_rmse(est, ref, assoc_tol=cfg.eval_assoc_tol, align=cfg.eval_align)
    lines = [f"ate_rmse = {rmse:.9f}"]
    if args.clouds:
        files = sorted(glob.glob(os.path.join(args.clouds, "*.xyz")))
        if not files:
            raise FileNotFoundError(f"no .xyz clouds under {args.clouds}")
        clouds = []
        for fid, path in enumerate(files):
            if fid >= len(est.poses):
                break
            clouds.append(est.poses[fid].apply(read_frame_points(path)))
        occupancy = voxel_occupancy(np.vstack(clouds), voxel=cfg.eval_voxel)
        lines.append(f"voxel_occupancy = {occupancy}")
    text = "\n".join(lines) + "\n"
    if args.out:
        atomic_write_text(args.out, text)
    print(text, end="")
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run_selftest

    ok, lines = run_selftest(fast=args.fast)
    for line in lines:
        print(line)
    print("selftest:", "PASS" if ok else "FAIL")
    return 0 if ok else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="planeba",
        description="Plane-landmark bundle adjustment over a sliding window")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="generate a synthetic scene directory")
    p_sim.add_argument("--spec", help="scene spec file (key = value)")
    p_sim.add_argument("--out", required=True, help="output scene directory")
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a scene spec key")
    p_sim.set_defaults(func=cmd_simulate)

    p_opt = sub.add_parser("optimize", help="run the sliding-window optimizer")
    p_opt.add_argument("scene", help="scene directory (frames/ + init.tum)")
    p_opt.add_argument("--out", required=True, help="output directory")
    p_opt.add_argument("--config", help="run config file")
    p_opt.add_argument("--seed", type=int, default=None)
    p_opt.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key")
    p_opt.add_argument("--dump-windows", action="store_true",
                       help="write per-window snapshot files for debugging")
    p_opt.set_defaults(func=cmd_optimize)

    p_eval = sub.add_parser("evaluate", help="trajectory and map metrics")
    p_eval.add_argument("estimate", help="estimated trajectory (TUM)")
    p_eval.add_argument("reference", help="reference trajectory (TUM)")
    p_eval.add_argument("--clouds", help="directory of per-frame .xyz clouds")
    p_eval.add_argument("--out", help="write the metrics report here")
    p_eval.add_argument("--config", help="run config file")
    p_eval.add_argument("--set", action="append", metavar="KEY=VALUE")
    p_eval.set_defaults(func=cmd_evaluate)

    p_self = sub.add_parser("selftest", help="run the built-in consistency suites")
    p_self.add_argument("--fast", action="store_true", help="reduced trial counts")
    p_self.set_defaults(func=cmd_selftest)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
