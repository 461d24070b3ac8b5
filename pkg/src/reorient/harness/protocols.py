"""Evaluation protocols: travel distance, stop latency, hold test.

All protocols drive a trained student through the simulation and reduce
the episodes to the metrics used in the result tables: contour travel
distance for commanded stop times, latency between the stop signal and
actual motion stop, and the perturbed-hold pass rate.
"""

import logging
from collections import namedtuple

import numpy as np

from ..sim.shapes import superellipse_points
from ..student import STUDENT_OBS_WIDTH, act_student, student_observe
from ..task import (SUCCESS, TIMEOUT, ReorientTask, sample_goal,
                    sample_perturbation, stop_label)

log = logging.getLogger(__name__)


def travel_distance(spec, theta_start, theta_end, n_dense=32768):
    """Contour length walked by the upward-facing surface point.

    As the object rotates from theta_start to theta_end, the point of
    the perimeter facing straight up slides along the contour; the
    returned length is the total distance it covers (monotone in the
    rotation magnitude, so more than one lap accumulates). For analytic
    shapes the polygon is re-discretized densely so the result matches
    the smooth contour to well under 0.1 mm.
    """
    if theta_end == theta_start:
        return 0.0
    if spec.kind in ("ellipse", "superellipse") and spec.a > 0:
        verts = superellipse_points(spec.a, spec.b, spec.exponent, n_dense)
    else:
        verts = spec.vertices
    edge = np.roll(verts, -1, axis=0) - verts
    lengths = np.hypot(edge[:, 0], edge[:, 1])
    # outward normal of each CCW edge; it faces up at one rotation angle
    # per turn: theta = pi/2 - atan2(n_y, n_x) (mod 2 pi)
    up_at = np.pi / 2 - np.arctan2(-edge[:, 0], edge[:, 1])
    lo, hi = sorted((float(theta_start), float(theta_end)))
    crossings = np.floor((hi - up_at) / (2 * np.pi)) \
        - np.floor((lo - up_at) / (2 * np.pi))
    return float(np.sum(lengths * crossings))


StopLatency = namedtuple("StopLatency", ["latency_s", "censored"])


def stop_latency(trace, t_signal, qdot_limit=0.05, omega_limit=0.1,
                 sustain_s=0.25, min_window_s=2.0):
    """Time from the stop signal until motion actually stops.

    trace: sequence of per-step records with keys "t" (seconds), "qdot"
    (6 joint velocities), and "obj_omega". Motion counts as stopped at
    the first time mean |qdot| < qdot_limit and |omega| < omega_limit,
    both sustained for sustain_s. A trace that never stops inside the
    window is reported as the window length with the censored flag set.
    """
    t = np.array([rec["t"] for rec in trace], dtype=float)
    if len(t) < 2 or np.any(np.diff(t) <= 0):
        raise ValueError("trace times must be strictly increasing")
    if t[-1] - t_signal < min_window_s:
        raise ValueError("post-signal window %.3f s is shorter than the "
                         "required %.3f s" % (t[-1] - t_signal, min_window_s))
    qdot = np.array([np.mean(np.abs(rec["qdot"])) for rec in trace])
    omega = np.array([abs(rec["obj_omega"]) for rec in trace])
    quiet = (qdot < qdot_limit) & (omega < omega_limit)
    for j in np.flatnonzero(t >= t_signal):
        end = t[j] + sustain_s
        if end > t[-1]:
            break
        span = (t >= t[j]) & (t <= end)
        if quiet[span].all():
            return StopLatency(float(t[j] - t_signal), False)
    return StopLatency(float(t[-1] - t_signal), True)


def _step_student(task, windows, params, arch, cfg, i_stop):
    """One policy step of the student on forced/derived stop signals."""
    s_obs = student_observe(task.env, task.prev_action, i_stop,
                            mask_qdot=cfg.mask_qdot)
    windows = np.concatenate([windows, s_obs[:, None]], axis=1)
    windows = windows[:, -cfg.window:]
    a = act_student(params, windows, arch,
                    action_bound=task.env.cfg.action_bound)
    return task.step(a), windows


def eval_reorient(student_params, arch, env_cfg, cfg, stop_time_s,
                  trials, seed=7, hold_steps=36, trace=None):
    """Travel distances when the stop signal arrives at a fixed time.

    Runs `trials` parallel episodes; the stop input is 0 until
    stop_time_s after the start, then 1. Each trial's travel distance is
    measured hold_steps after the signal. Trials that violate a reset
    constraint are excluded from the distance summary but reported in
    the per-trial rows. `trace` collects per-step records when given a
    list.
    """
    policy_dt = env_cfg.dt * env_cfg.inner_per_policy
    stop_step = int(round(stop_time_s / policy_dt))
    total = stop_step + hold_steps
    if total > env_cfg.horizon:
        raise ValueError("stop time %.2f s does not fit in the episode "
                         "horizon" % stop_time_s)
    task = ReorientTask(env_cfg, trials, seed=seed, goal_sign=cfg.goal_sign,
                        success_terminates=False)
    spec_idx = task.env.spec_idx.copy()
    windows = np.zeros((trials, 0, STUDENT_OBS_WIDTH), np.float32)
    failed = np.full(trials, None, dtype=object)
    theta_end = np.zeros(trials)
    for t in range(total):
        i_stop = np.full(trials, 1 if t >= stop_step else 0)
        out, windows = _step_student(task, windows, student_params, arch,
                                     cfg, i_stop)
        live = np.array([f is None for f in failed])
        if trace is not None:
            now = (t + 1) * policy_dt
            for i in np.flatnonzero(live & ~out["done"]):
                trace.append({
                    "trial": int(i), "t": now,
                    "q": task.env.q[i].tolist(),
                    "qdot": task.env.qdot[i].tolist(),
                    "obj_pos": task.env.obj_pos[i].tolist(),
                    "obj_theta": float(task.env.obj_theta[i]),
                    "obj_omega": float(task.env.obj_omega[i]),
                    "contacts": task.contact_flags[i].tolist(),
                    "reward": float(out["reward"][i]),
                })
        for i in np.flatnonzero(live & out["done"]):
            failed[i] = out["reasons"][i]
        alive = np.array([f is None for f in failed])
        theta_end[alive] = task.env.obj_theta[alive]
    rows = []
    distances = []
    for i in range(trials):
        if failed[i] is None:
            d = travel_distance(env_cfg.shapes[spec_idx[i]], 0.0,
                                theta_end[i])
            distances.append(d)
            rows.append({"trial": i, "stop_time_s": stop_time_s,
                         "travel_m": d, "outcome": "ok"})
        else:
            rows.append({"trial": i, "stop_time_s": stop_time_s,
                         "travel_m": "", "outcome": str(failed[i])})
    dist = np.array(distances)
    quant = (np.percentile(dist, [25, 50, 75]) if len(dist)
             else np.full(3, np.nan))
    return {
        "stop_time_s": stop_time_s,
        "distances": distances,
        "n_trials": trials,
        "n_failed": int(trials - len(distances)),
        "q25": float(quant[0]),
        "median": float(quant[1]),
        "q75": float(quant[2]),
        "rows": rows,
    }


def _assign_objects(task, spec_indices):
    """Restart every environment on the given object variants."""
    idx = np.arange(task.n)
    goals = sample_goal(task.rng, n=task.n, sign=task.goal_sign)
    task.env.reset_indices(idx, goals, spec_indices=spec_indices)
    task.tracker.reset(idx)
    task.prev_action[idx] = 0.0
    task.steps[idx] = 0
    task.contact_flags[idx] = False


def hold_test(student_params, arch, env_cfg, cfg, trials=20,
              duration_s=3.0, seed=11, perturb=True, random_policy=False,
              variant_indices=None):
    """Perturbed firm-grasp hold: pass iff the object stays put.

    Each trial reorients until the stop signal flips, then holds for
    duration_s under a planar disturbance of magnitude 10 times the
    object mass, resampled every second. A trial passes when the CoM
    drifts less than 2 cm and at least two fingertips keep contact for
    the whole hold. random_policy replaces the student with uniform
    actions and holds from the start (the baseline).
    """
    policy_dt = env_cfg.dt * env_cfg.inner_per_policy
    hold_steps = int(round(duration_s / policy_dt))
    per_second = int(round(1.0 / policy_dt))
    task = ReorientTask(env_cfg, trials, seed=seed, goal_sign=cfg.goal_sign,
                        success_terminates=False)
    if variant_indices is None:
        variant_indices = np.unique(np.linspace(
            0, len(env_cfg.shapes) - 1, 5).astype(int))
    spec_indices = np.asarray(variant_indices)[
        np.arange(trials) % len(variant_indices)]
    _assign_objects(task, spec_indices)
    rng = np.random.default_rng(seed + 1)
    bound = env_cfg.action_bound
    windows = np.zeros((trials, 0, STUDENT_OBS_WIDTH), np.float32)
    holding = np.zeros(trials, dtype=bool)
    held = np.zeros(trials, dtype=np.int64)
    hold_com = np.zeros((trials, 2))
    drift_max = np.zeros(trials)
    result = np.full(trials, None, dtype=object)
    if random_policy:
        holding[:] = True
        hold_com[:] = task.env.obj_pos
    for t in range(env_cfg.horizon):
        live = np.array([r is None for r in result])
        if not live.any():
            break
        i_stop = np.ones(trials, dtype=np.int64) if random_policy else \
            stop_label(task.env.delta_theta(), task.tracker.theta_bar)
        newly = live & ~holding & (i_stop == 1)
        holding[newly] = True
        hold_com[newly] = task.env.obj_pos[newly]
        for i in np.flatnonzero(live & holding & (held % per_second == 0)):
            task.env.apply_perturbation(
                [i], sample_perturbation(task.env.mass[i], rng)
                if perturb else np.zeros(2), duration_s=1.0)
        if random_policy:
            out = task.step(rng.uniform(-bound, bound, (trials, 6)))
        else:
            out, windows = _step_student(task, windows, student_params,
                                         arch, cfg, i_stop)
        for i in np.flatnonzero(live & out["done"]):
            if out["reasons"][i] not in (SUCCESS, TIMEOUT):
                result[i] = False
        live = np.array([r is None for r in result])
        active = live & holding
        drift = np.linalg.norm(task.env.obj_pos - hold_com, axis=1)
        drift_max[active] = np.maximum(drift_max[active], drift[active])
        bad = active & ((drift >= 0.02)
                        | (task.contact_flags.sum(axis=1) < 2))
        result[bad] = False
        held[active] += 1
        result[live & (held >= hold_steps)] = True
    result[[r is None for r in result]] = False   # never reached the hold
    rows = [{"trial": i, "variant": int(spec_indices[i]),
             "passed": bool(result[i]), "drift_max_m": float(drift_max[i])}
            for i in range(trials)]
    per_variant = {}
    for v in np.unique(spec_indices):
        sel = spec_indices == v
        per_variant[int(v)] = float(np.mean(result[sel].astype(bool)))
    return {
        "pass_rate": float(np.mean(result.astype(bool))),
        "n_trials": trials,
        "per_variant": per_variant,
        "rows": rows,
    }
