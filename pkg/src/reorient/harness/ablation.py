"""Ablation drivers: train both arms of a comparison on each seed.

Three ablations are supported: the keyframe reward term on/off for the
teacher, joint velocities visible/hidden for the student, and the
student sequence backbone (attention stack vs recurrent). Each run
emits a comparison table plus per-arm learning curves; the architecture
curves carry both a sample axis and a wall-clock axis.
"""

import csv
import logging
import os
import time
from dataclasses import replace

import numpy as np

from ..nn import OptimizerState, ParamSet
from ..sim import EnvConfig
from ..student import (DaggerConfig, Dataset, dagger_iteration,
                       evaluate_student, init_student)
from ..task import ReorientTask
from ..teacher import TrainConfig, train_teacher
from .metrics import write_rows_csv

log = logging.getLogger(__name__)

ABLATION_KINDS = ("demo-term", "joint-velocity", "architecture")
TABLE_COLUMNS = ("kind", "seed", "arm", "steps_to_threshold",
                 "final_success", "diverged")


def steps_to_threshold(curve_path, threshold):
    """First env-step count at which the curve reaches the threshold."""
    with open(curve_path) as fh:
        for row in csv.DictReader(fh):
            if float(row["success_rate"]) >= threshold:
                return int(row["env_steps"])
    return None


def _teacher_arm(arm, c3, seed, train_cfg, env_cfg, out_dir, threshold):
    cfg = replace(train_cfg, seed=seed, c3=c3)
    _, curve_path, last = train_teacher(
        cfg, env_cfg=env_cfg,
        out_dir=os.path.join(out_dir, "%s_seed%d" % (arm, seed)))
    final = last["success_rate"] if last else 0.0
    steps = steps_to_threshold(curve_path, threshold)
    return {"kind": "demo-term", "seed": seed, "arm": arm,
            "steps_to_threshold": "" if steps is None else steps,
            "final_success": final,
            "diverged": steps is None and final == 0.0}


def _timed_distill(cfg, teacher_ckpt, env_cfg, curve_path):
    """Distillation loop that records wall-clock and sample axes."""
    teacher_params = ParamSet.load(teacher_ckpt)
    rng = np.random.default_rng(cfg.seed)
    params, arch = init_student(cfg, rng)
    opt = OptimizerState(params, lr=cfg.lr)
    dataset = Dataset()
    task = ReorientTask(env_cfg, cfg.episodes, seed=cfg.seed,
                        goal_sign=cfg.goal_sign, success_terminates=False)
    start = time.monotonic()
    rows = []
    for i in range(cfg.iterations):
        train_mse, dataset = dagger_iteration(
            params, arch, teacher_params, task, cfg.beta(i), dataset,
            cfg, opt, rng)
        ev = evaluate_student(params, arch, env_cfg, cfg)
        rows.append({
            "iteration": i,
            "dataset_steps": dataset.n_steps,
            "wall_clock_s": round(time.monotonic() - start, 3),
            "train_mse": train_mse,
            "success_rate": ev["success_rate"],
        })
    write_rows_csv(curve_path, rows, ("iteration", "dataset_steps",
                                      "wall_clock_s", "train_mse",
                                      "success_rate"))
    return rows


def _student_arm(kind, arm, seed, dagger_cfg, teacher_ckpt, env_cfg,
                 out_dir, **overrides):
    cfg = replace(dagger_cfg, seed=seed, **overrides)
    curve_path = os.path.join(out_dir, "%s_seed%d.csv" % (arm, seed))
    rows = _timed_distill(cfg, teacher_ckpt, env_cfg, curve_path)
    final = rows[-1]["success_rate"]
    return {"kind": kind, "seed": seed, "arm": arm,
            "steps_to_threshold": "",
            "final_success": final,
            "diverged": not np.isfinite(rows[-1]["train_mse"])}


def run_ablation(kind, seeds, out_dir, env_cfg=None, train_cfg=None,
                 dagger_cfg=None, teacher_ckpt=None, threshold=0.5):
    """Train both arms per seed; returns and writes the comparison table."""
    if kind not in ABLATION_KINDS:
        raise ValueError("unknown ablation kind %r" % kind)
    if not seeds:
        raise ValueError("need at least one seed")
    env_cfg = (env_cfg or EnvConfig()).finalize()
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for seed in seeds:
        if kind == "demo-term":
            cfg = train_cfg or TrainConfig()
            rows.append(_teacher_arm("demo_on", cfg.c3, seed, cfg,
                                     env_cfg, out_dir, threshold))
            rows.append(_teacher_arm("demo_off", 0.0, seed, cfg,
                                     env_cfg, out_dir, threshold))
        else:
            if teacher_ckpt is None:
                raise ValueError("student ablations need a teacher "
                                 "checkpoint")
            cfg = dagger_cfg or DaggerConfig()
            if kind == "joint-velocity":
                arms = [("qdot_on", {"mask_qdot": False}),
                        ("qdot_off", {"mask_qdot": True})]
            else:
                arms = [("transformer", {"arch": "transformer"}),
                        ("recurrent", {"arch": "recurrent"})]
            for arm, overrides in arms:
                rows.append(_student_arm(kind, arm, seed, cfg,
                                         teacher_ckpt, env_cfg, out_dir,
                                         **overrides))
        log.info("ablation %s seed %d done", kind, seed)
    table_path = os.path.join(out_dir,
                              "ablation_%s.csv" % kind.replace("-", "_"))
    write_rows_csv(table_path, rows, TABLE_COLUMNS)
    return rows, table_path
