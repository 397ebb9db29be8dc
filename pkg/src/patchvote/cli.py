"""Command-line interface: ``patchvote {keypoints,synth,estimate,benchmark,servo}``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .errors import EXIT_IO, EXIT_NOT_CONVERGED, EXIT_OK, ConfigError, DivergenceError, PatchVoteError
from .evaluation import (DEFAULT_SWEEP_VALUES, SWEEP_AXES, add_metric, adds_metric, format_sweep_csv,
                         format_trial_csv, pose_correct, regression_error_stats, run_benchmark, run_sweep,
                         summary_json)
from .geometry import Pose
from .keypoints import diameter, farthest_point_sample, load_keypoints, read_ply, save_keypoints, write_ply
from .pipeline import REGISTRATION_MODES, estimate_pose, pipeline_estimator
from .servoing import export_trajectory, run_servo
from .votes import load_votes, save_votes, scene_cloud, synthesize

THREADS_ENV = "PATCHVOTE_THREADS"


def _default_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV}={raw!r} is not an integer") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be at least 1")
    return n


def _write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _pose_json(T: Pose) -> dict:
    rv = T.rotvec()
    return {
        "translation_mm": [round(float(c) * 1e3, 9) for c in T.t],
        "rotation": [[round(float(c), 12) for c in row] for row in T.R],
        "axis_angle_deg": [round(float(np.degrees(c)), 9) for c in rv],
    }


def _apply_pipeline_overrides(cfg, args):
    changes = {}
    if getattr(args, "registration", None):
        changes["registration"] = args.registration
    if getattr(args, "metric", None):
        changes["metric"] = args.metric
    if getattr(args, "cluster_k", None) is not None:
        changes["cluster_k"] = args.cluster_k
    if getattr(args, "bandwidth_mm", None) is not None:
        changes["mean_shift"] = replace(cfg.mean_shift, bandwidth=args.bandwidth_mm * 1e-3)
    try:
        return replace(cfg, **changes)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# ------------------------------------------------------------------ commands


def cmd_keypoints(args) -> int:
    model = read_ply(args.model, unit=args.unit)
    start = args.start_index if args.start_index is not None else args.seed % len(model)
    try:
        kps = farthest_point_sample(model, args.M, seed_index=start)
    except ValueError as exc:
        raise ConfigError(str(exc), stage="keypoints") from None
    save_keypoints(kps, args.out, model_path=args.model)
    print(f"M={kps.M} covering_radius_mm={kps.covering_radius * 1e3:.6g} -> {args.out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    scene = cfgmod.load_scene(args.scene, unit=args.unit, seed=args.seed)
    if args.seed_override:
        scene = scene.with_(seed=args.seed)
    res = synthesize(scene)
    save_votes(res.votes, args.out)
    if args.cloud:
        write_ply(scene_cloud(scene), args.cloud, unit="mm")
    if args.keypoints_out:
        save_keypoints(scene.keypoints, args.keypoints_out)
    print(f"N={res.votes.N} M={res.votes.M} realized_tpr={res.realized_tpr:.4f} "
          f"realized_tnr={res.realized_tnr:.4f} -> {args.out}")
    return EXIT_OK


def cmd_estimate(args) -> int:
    run = cfgmod.load_run_config(args.config, unit=args.unit, seed=args.seed)
    cfg = _apply_pipeline_overrides(run.pipeline, args)
    model, gt, cloud = run.model, run.gt_pose, None
    if run.scene is not None:
        syn = synthesize(run.scene)
        votes, kps = syn.votes, run.scene.keypoints
        if cfg.use_icp:
            cloud = scene_cloud(run.scene)
    else:
        votes, kps = load_votes(run.votes_path), load_keypoints(run.keypoints_path)
        if run.cloud_path is not None:
            cloud = read_ply(run.cloud_path)
    out = estimate_pose(votes, kps, cfg, model=model, scene=cloud)

    doc = {
        "pose": _pose_json(out.pose),
        "registration": {"mode": cfg.registration, "rms_mm": out.registration.rms * 1e3,
                         "iterations": out.registration.iterations,
                         "converged": out.registration.converged, "fallback": out.registration.fallback},
        "aggregation": {"keypoints_mm": (out.aggregated.points * 1e3).round(6).tolist(),
                        "iterations": out.aggregated.iterations.tolist(),
                        "spread_mm": (np.sqrt(out.aggregated.variances) * 1e3).round(6).tolist()},
        "clusters": out.clusters.tolist(),
        "votes": {"N": votes.N, "M": votes.M},
        "notes": out.notes,
        "timings_ms": {**out.timings_ms, "total": out.total_ms},
    }
    if out.icp is not None:
        doc["icp"] = {"rms_mm": out.icp.rms * 1e3, "iterations": out.icp.iterations,
                      "history_mm": [h * 1e3 for h in out.icp.history]}
    if gt is not None and model is not None:
        D = diameter(model) * 1e3
        add, adds = add_metric(model, out.pose, gt), adds_metric(model, out.pose, gt)
        mean, std, _ = regression_error_stats(out.aggregated, gt, kps)
        doc["evaluation"] = {"add_mm": add, "adds_mm": adds, "diameter_mm": D, "metric": cfg.metric,
                             "correct": pose_correct(adds if cfg.metric == "adds" else add, D),
                             "reg_mean_mm": mean, "reg_std_mm": std}
    text = json.dumps(doc, indent=2) + "\n"
    sys.stdout.write(text)
    if args.out:
        _write(args.out, text)
    return EXIT_OK


def cmd_benchmark(args) -> int:
    if args.trials < 1:
        raise ConfigError("--trials must be at least 1")
    run = cfgmod.load_run_config(args.config, unit=args.unit, seed=args.seed)
    if run.scene is None:
        raise ConfigError("benchmark needs a synthetic 'scene' in the config")
    cfg = _apply_pipeline_overrides(run.pipeline, args)
    out_dir = Path(args.out_dir)
    randomize = not args.fixed_pose
    if args.sweep == "none":
        reports, summary = run_benchmark(run.scene, args.trials, args.seed, cfg, args.threads, randomize)
        _write(out_dir / "trials.csv", format_trial_csv(reports, args.record_timings))
        _write(out_dir / "summary.json", summary_json(summary, args.record_timings, seed=args.seed))
        print(f"trials={summary.trials} pass_rate={summary.pass_rate:.2f}% failures={summary.failures} "
              f"reg_mean_mm={summary.reg_mean_mm:.3f}")
        return EXIT_OK

    values = args.values if args.values else DEFAULT_SWEEP_VALUES[args.sweep]
    results = run_sweep(run.scene, args.sweep, values, args.trials, args.seed, cfg, args.threads, randomize)
    for v, reports, _ in results:
        _write(out_dir / f"trials_{args.sweep}_{v:g}.csv", format_trial_csv(reports, args.record_timings))
    _write(out_dir / f"sweep_{args.sweep}.csv", format_sweep_csv(args.sweep, results, args.record_timings))
    doc = [json.loads(summary_json(s, args.record_timings, **{args.sweep: v})) for v, _, s in results]
    _write(out_dir / "summary.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    if not args.no_plots:
        from .plotting import line_plot

        xs = [v for v, _, _ in results]
        line_plot(out_dir / f"accuracy_vs_{args.sweep}.svg", xs,
                  {"pass rate (%)": [s.pass_rate for _, _, s in results]},
                  args.sweep, "correct poses (%)", markers=True)
        line_plot(out_dir / f"time_vs_{args.sweep}.svg", xs,
                  {"total (ms)": [s.timings_ms["total"] for _, _, s in results]},
                  args.sweep, "mean time per frame (ms)", markers=True)
    for v, _, s in results:
        print(f"{args.sweep}={v:g} pass_rate={s.pass_rate:.2f}% mean_adds_mm={s.mean_adds_mm:.3f} "
              f"total_ms={s.timings_ms['total']:.2f}")
    return EXIT_OK


def cmd_servo(args) -> int:
    sc = cfgmod.load_servo(args.scenario, unit=args.unit, seed=args.seed)
    estimator = None
    if sc.estimator == "exact":
        from .servoing import exact_estimator
        estimator = exact_estimator
    elif sc.estimator == "noisy":
        from .servoing import noisy_estimator
        estimator = noisy_estimator(sc.servo.noise_t, sc.servo.noise_r, sc.servo.seed)
    elif sc.estimator == "pipeline":
        estimator = pipeline_estimator(sc.scene, sc.pipeline)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "trajectory.csv"
    svg_path = None if args.no_plots else out_dir / "trajectory.svg"
    try:
        traj = run_servo(sc.initial, sc.desired, sc.servo, estimator)
    except DivergenceError as exc:
        if exc.trajectory is not None and len(exc.trajectory):
            export_trajectory(exc.trajectory, csv_path, svg_path)
        raise
    export_trajectory(traj, csv_path, svg_path)
    e = traj.true_errors[-1]
    print(f"converged={traj.converged} steps={traj.steps} "
          f"final_t_mm=({e[0] * 1e3:.3f}, {e[1] * 1e3:.3f}, {e[2] * 1e3:.3f}) "
          f"final_theta_deg={np.degrees(np.linalg.norm(e[3:])):.4f}")
    return EXIT_OK if traj.converged else EXIT_NOT_CONVERGED


# ------------------------------------------------------------------ parser


def _add_pipeline_flags(p):
    p.add_argument("--registration", choices=REGISTRATION_MODES, help="override the config's mode")
    p.add_argument("--metric", choices=("add", "adds"))
    p.add_argument("--cluster-k", type=int, help="keep only the k lowest-variance keypoint clusters")
    p.add_argument("--bandwidth-mm", type=float, help="mean-shift kernel bandwidth")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="patchvote",
                                     description="Patch-voting 6-DoF pose estimation on synthetic votes.")
    parser.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    parser.add_argument("--threads", type=int, default=None,
                        help=f"worker threads (default ${THREADS_ENV} or 1)")
    parser.add_argument("--unit", choices=("m", "mm"), help="override the length unit of input files")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("keypoints", help="farthest-point-sample keypoints from a PLY model")
    p.add_argument("model", help="ASCII PLY file")
    p.add_argument("-M", type=int, default=9, help="number of keypoints (default 9)")
    p.add_argument("--start-index", type=int, help="FPS start vertex (default: seed modulo vertex count)")
    p.add_argument("-o", "--out", required=True, help="keypoint JSON to write")
    p.set_defaults(func=cmd_keypoints)

    p = sub.add_parser("synth", help="synthesize a vote file from a scene description")
    p.add_argument("scene", help="scene JSON")
    p.add_argument("-o", "--out", required=True, help="votes CSV to write")
    p.add_argument("--cloud", help="also write the simulated depth cloud (PLY, mm)")
    p.add_argument("--keypoints-out", help="also write the scene's keypoints (JSON)")
    p.add_argument("--seed-override", action="store_true", help="let --seed replace the scene file's seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("estimate", help="estimate one pose from votes or a synthetic scene")
    p.add_argument("config", help="run config JSON")
    p.add_argument("-o", "--out", help="also write the JSON report here")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("benchmark", help="seeded Monte-Carlo benchmark, optionally sweeping one axis")
    p.add_argument("config", help="run config JSON with a synthetic scene")
    p.add_argument("-n", "--trials", type=int, default=100)
    p.add_argument("--sweep", choices=SWEEP_AXES, default="none")
    p.add_argument("--values", type=float, nargs="+", help="sweep values (defaults per axis)")
    p.add_argument("--fixed-pose", action="store_true", help="keep the scene pose instead of randomizing it")
    p.add_argument("--record-timings", action="store_true",
                   help="fill timing columns in per-trial CSVs (makes them run-dependent)")
    p.add_argument("--no-plots", action="store_true")
    p.add_argument("-o", "--out-dir", required=True)
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("servo", help="simulate the position-based visual servoing loop")
    p.add_argument("scenario", help="servo scenario JSON")
    p.add_argument("-o", "--out-dir", required=True)
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_servo)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.threads is None:
            args.threads = _default_threads()
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        return args.func(args)
    except PatchVoteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
