"""Command-line entry point for training, evaluation, and the peel demo.

Exit codes: 0 on success, 2 on configuration errors (bad flags, missing
or invalid config files), 3 on runtime failures.
"""

import argparse
import logging
import os
import sys

import numpy as np

from .harness import (ConfigError, MetricsRecord, build_dagger_config,
                      build_env_config, build_train_config, config_hash,
                      eval_reorient, hold_test, load_config, run_ablation,
                      stop_latency, trace_to_csv, read_trace,
                      write_metrics, write_rows_csv, write_trace)
from .nn import ParamSet
from .peel import Camera, Superellipsoid, peel_pipeline, render_synthetic
from .peel.io import write_ply, write_trajectory_csv
from .student import distill, init_student
from .teacher import train_teacher

log = logging.getLogger(__name__)


def _load(args):
    """Parsed config dict and its hash ({} and hash of {} without a file)."""
    if args.config is None:
        return {}, config_hash({})
    cfg = load_config(args.config)
    return cfg, config_hash(cfg)


def _student_setup(args, cfg):
    dagger_cfg = build_dagger_config(cfg, seed=args.seed)
    ckpt = args.student or cfg.get("student", {}).get("student_ckpt")
    if not ckpt:
        raise ConfigError("a student checkpoint is required "
                          "(--student or [student] student_ckpt)")
    if not os.path.exists(ckpt + ".json"):
        raise ConfigError("student checkpoint not found: %s" % ckpt)
    params = ParamSet.load(ckpt)
    _, arch = init_student(dagger_cfg, np.random.default_rng(0))
    return params, arch, dagger_cfg


def _cmd_train_teacher(args):
    cfg, chash = _load(args)
    train_cfg = build_train_config(cfg, seed=args.seed)
    env_cfg = build_env_config(cfg)
    ckpt, curve, last = train_teacher(train_cfg, env_cfg=env_cfg,
                                      out_dir=args.out)
    write_metrics(os.path.join(args.out, "metrics.jsonl"), [MetricsRecord(
        kind="train-teacher", seed=train_cfg.seed, config_hash=chash,
        values=last or {})])
    print("checkpoint: %s\ncurve: %s" % (ckpt, curve))
    return 0


def _cmd_distill(args):
    cfg, chash = _load(args)
    dagger_cfg = build_dagger_config(cfg, seed=args.seed)
    env_cfg = build_env_config(cfg)
    teacher = args.teacher or cfg.get("student", {}).get("teacher_ckpt")
    if not teacher:
        raise ConfigError("a teacher checkpoint is required "
                          "(--teacher or [student] teacher_ckpt)")
    if not os.path.exists(teacher + ".json"):
        raise ConfigError("teacher checkpoint not found: %s" % teacher)
    ckpt, curve, last = distill(dagger_cfg, teacher, env_cfg=env_cfg,
                                out_dir=args.out)
    write_metrics(os.path.join(args.out, "metrics.jsonl"), [MetricsRecord(
        kind="distill", seed=dagger_cfg.seed, config_hash=chash,
        values=last or {})])
    print("checkpoint: %s\ncurve: %s" % (ckpt, curve))
    return 0


def _cmd_eval_reorient(args):
    cfg, chash = _load(args)
    params, arch, dagger_cfg = _student_setup(args, cfg)
    env_cfg = build_env_config(cfg)
    os.makedirs(args.out, exist_ok=True)
    trace = [] if args.trace else None
    result = eval_reorient(params, arch, env_cfg, dagger_cfg,
                           stop_time_s=args.stop_time, trials=args.trials,
                           seed=args.seed, trace=trace)
    write_rows_csv(os.path.join(args.out, "travel.csv"), result["rows"],
                   ("trial", "stop_time_s", "travel_m", "outcome"))
    if trace is not None:
        write_trace(os.path.join(args.out, "trace.jsonl"), trace)
    values = {k: result[k] for k in
              ("stop_time_s", "n_trials", "n_failed", "q25", "median",
               "q75")}
    write_metrics(os.path.join(args.out, "metrics.jsonl"), [MetricsRecord(
        kind="eval-reorient", seed=args.seed, config_hash=chash,
        values=values)])
    print("median travel %.4f m over %d trials (%d failed)"
          % (result["median"], result["n_trials"], result["n_failed"]))
    return 0


def _cmd_eval_hold(args):
    cfg, chash = _load(args)
    env_cfg = build_env_config(cfg)
    if args.random:
        dagger_cfg = build_dagger_config(cfg, seed=args.seed)
        params, arch = None, None
    else:
        params, arch, dagger_cfg = _student_setup(args, cfg)
    os.makedirs(args.out, exist_ok=True)
    result = hold_test(params, arch, env_cfg, dagger_cfg,
                       trials=args.trials, duration_s=args.duration,
                       seed=args.seed, perturb=not args.no_perturb,
                       random_policy=args.random)
    write_rows_csv(os.path.join(args.out, "hold.csv"), result["rows"],
                   ("trial", "variant", "passed", "drift_max_m"))
    values = {"pass_rate": result["pass_rate"],
              "n_trials": result["n_trials"],
              "per_variant": result["per_variant"]}
    write_metrics(os.path.join(args.out, "metrics.jsonl"), [MetricsRecord(
        kind="eval-hold", seed=args.seed, config_hash=chash,
        values=values)])
    print("hold pass rate %.2f over %d trials"
          % (result["pass_rate"], result["n_trials"]))
    return 0


def _cmd_stop_latency(args):
    records = [rec for rec in read_trace(args.trace)
               if rec.get("trial", 0) == args.trial]
    if not records:
        raise ConfigError("trace has no records for trial %d" % args.trial)
    lat = stop_latency(records, args.signal)
    print("latency %.3f s%s" % (lat.latency_s,
                                " (censored)" if lat.censored else ""))
    if args.out:
        write_metrics(args.out, [MetricsRecord(
            kind="stop-latency", seed=0, config_hash=config_hash({}),
            values={"latency_s": lat.latency_s,
                    "censored": lat.censored})])
    return 0


def _demo_scene():
    """Bundled synthetic scene: an elongated root under a top-down camera."""
    shape = Superellipsoid(semi_axes=(0.10, 0.035, 0.03), exponent=2.5)
    camera = Camera(fx=220.0, fy=220.0, cx=50.0, cy=50.0,
                    width=101, height=101,
                    rotation=np.array([[1.0, 0.0, 0.0],
                                       [0.0, -1.0, 0.0],
                                       [0.0, 0.0, -1.0]]),
                    translation=np.array([0.0, 0.0, 0.6]))
    return render_synthetic(shape, camera)


def _cmd_peelpath(args):
    from .peel import backproject

    os.makedirs(args.out, exist_ok=True)
    scene = _demo_scene()
    cloud = backproject(scene)
    traj = peel_pipeline(scene, smoothing=args.smoothing, step=args.step)
    ply = os.path.join(args.out, "cloud.ply")
    csv_path = os.path.join(args.out, "trajectory.csv")
    write_ply(ply, cloud.points)
    write_trajectory_csv(csv_path, traj)
    print("%d points -> %d waypoints\n%s\n%s"
          % (len(cloud.points), len(traj.waypoints), ply, csv_path))
    return 0


def _cmd_ablate(args):
    cfg, chash = _load(args)
    seeds = [int(s) for s in args.seeds.replace(",", " ").split()]
    rows, table = run_ablation(
        args.kind, seeds, args.out,
        env_cfg=build_env_config(cfg),
        train_cfg=build_train_config(cfg),
        dagger_cfg=build_dagger_config(cfg),
        teacher_ckpt=args.teacher)
    write_metrics(os.path.join(args.out, "metrics.jsonl"), [MetricsRecord(
        kind="ablation-" + args.kind, seed=seed, config_hash=chash,
        values={"arm": row["arm"],
                "final_success": row["final_success"],
                "diverged": bool(row["diverged"])})
        for seed, row in ((r["seed"], r) for r in rows)])
    print("table: %s" % table)
    return 0


def _cmd_replay(args):
    n = trace_to_csv(args.trace, args.out)
    print("%d rows -> %s" % (n, args.out))
    return 0


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="reorient",
        description="Planar in-hand reorientation lab: training, "
                    "evaluation, and peel-path planning.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, helptext):
        p = sub.add_parser(name, help=helptext)
        p.set_defaults(fn=fn)
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default="runs/" + name)
        return p

    add("train-teacher", _cmd_train_teacher, "train the full-state teacher")
    p = add("distill", _cmd_distill, "distill the stop-signal student")
    p.add_argument("--teacher", help="teacher checkpoint path")
    p = add("eval-reorient", _cmd_eval_reorient,
            "travel distance at a commanded stop time")
    p.add_argument("--student", help="student checkpoint path")
    p.add_argument("--stop-time", type=float, default=3.5)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--trace", action="store_true",
                   help="also write a JSON-lines trace")
    p = add("eval-hold", _cmd_eval_hold, "perturbed firm-grasp hold test")
    p.add_argument("--student", help="student checkpoint path")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--duration", type=float, default=3.0)
    p.add_argument("--random", action="store_true",
                   help="random-policy baseline")
    p.add_argument("--no-perturb", action="store_true")
    p = sub.add_parser("stop-latency",
                       help="latency from a stop signal to motion stop")
    p.set_defaults(fn=_cmd_stop_latency)
    p.add_argument("--trace", required=True, help="JSON-lines trace file")
    p.add_argument("--signal", type=float, required=True,
                   help="stop signal time, seconds")
    p.add_argument("--trial", type=int, default=0)
    p.add_argument("--out", help="optional metrics output path")
    p = add("peelpath", _cmd_peelpath,
            "peel trajectory from the bundled synthetic scene")
    p.add_argument("--smoothing", type=float, default=1e-6)
    p.add_argument("--step", type=float, default=0.005)
    p = add("ablate", _cmd_ablate, "train both arms of an ablation")
    p.add_argument("--kind", required=True,
                   choices=("demo-term", "joint-velocity", "architecture"))
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--teacher", help="teacher checkpoint path")
    p = sub.add_parser("replay", help="re-render a trace to CSV")
    p.set_defaults(fn=_cmd_replay)
    p.add_argument("--trace", required=True)
    p.add_argument("--out", required=True)
    return parser


def cli_main(argv=None):
    logging.basicConfig(level=logging.INFO)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    try:
        return args.fn(args)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 2
    except Exception as exc:
        log.exception("runtime failure")
        print("error: %s" % exc, file=sys.stderr)
        return 3


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
