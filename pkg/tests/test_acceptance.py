"""End-to-end acceptance gates.

The expensive artifacts (trained teacher, distilled student) are built
once per session and shared across the tests that consume them. Tests
marked slow train the fully randomized configuration and the ablation
arms; everything else runs in the default suite.
"""

import os
import subprocess
import sys
import time
from dataclasses import replace

import numpy as np
import pytest

from reorient.control import (COMMAND_REF, MEASURED_REF, CommandPipeline,
                              setpoint_jump_metric)
from reorient.harness import eval_reorient, hold_test
from reorient.nn import (ParamSet, RecurrentConfig, Tensor,
                         TransformerConfig, backprop,
                         forward_causal_attention, forward_mlp,
                         forward_recurrent, init_mlp, init_recurrent,
                         init_transformer)
from reorient.peel import (backproject, fit_spline, peel_pipeline,
                           principal_axis, render_synthetic,
                           slice_and_project, Camera, DepthScene,
                           Superellipsoid)
from reorient.sim import EnvConfig
from reorient.student import (DaggerConfig, distill, evaluate_student,
                              init_student)
from reorient.task import SuccessTracker, update_success_tracker
from reorient.teacher import TrainConfig, train_teacher

# hyperparameters that reach the training targets on a single CPU core
EASY_TRAIN = dict(n_envs=256, rollout_horizon=96, hidden=(256, 256, 256),
                  minibatch=2048, epochs=4, lr=3e-4, entropy_coef=0.01,
                  log_std_init=-2.0, total_steps=2_000_000, seed=0)

STUDENT_CFG = dict(iterations=6, episodes=32, rollout_steps=240,
                   window=32, hidden=64, n_layers=2, epochs=4,
                   minibatch=64, steps_per_epoch=60, lr=1e-3, seed=0,
                   eval_episodes=16)


def _easy_env():
    # without randomization every reset uses the median catalog ellipse
    # at its fixed mass: a single-object, fixed-physics task
    return EnvConfig().finalize()


def _curve_best(curve_path):
    rows = [line.split(",") for line in
            open(curve_path).read().splitlines()[1:]]
    return max(float(r[1]) for r in rows)


@pytest.fixture(scope="session")
def teacher_run(tmp_path_factory):
    out = str(tmp_path_factory.mktemp("teacher"))
    t0 = time.monotonic()
    ckpt, curve, last = train_teacher(TrainConfig(**EASY_TRAIN),
                                      env_cfg=_easy_env(), out_dir=out)
    return {"ckpt": ckpt, "curve": curve, "last": last,
            "best": _curve_best(curve),
            "elapsed_s": time.monotonic() - t0}


@pytest.fixture(scope="session")
def student_run(teacher_run, tmp_path_factory):
    out = str(tmp_path_factory.mktemp("student"))
    cfg = DaggerConfig(**STUDENT_CFG)
    ckpt, curve, last = distill(cfg, teacher_run["ckpt"],
                                env_cfg=_easy_env(), out_dir=out)
    params = ParamSet.load(ckpt)
    _, arch = init_student(cfg, np.random.default_rng(0))
    return {"ckpt": ckpt, "params": params, "arch": arch, "cfg": cfg,
            "last": last}


# -- 1. gradient suite ------------------------------------------------


def _finite_diff_check(params, loss_fn, rng, n_probes=10, h=1e-4):
    leaves = params.as_tensors()
    grads = backprop(loss_fn(leaves), leaves)
    names = params.names()
    worst = 0.0
    for _ in range(n_probes):
        name = names[rng.integers(len(names))]
        idx = tuple(rng.integers(s) for s in params[name].shape)
        orig = params[name][idx]
        wp, wm = np.float32(orig + h), np.float32(orig - h)
        params[name][idx] = wp
        fp = float(loss_fn(params.as_tensors()).data)
        params[name][idx] = wm
        fm = float(loss_fn(params.as_tensors()).data)
        params[name][idx] = orig
        fd = (fp - fm) / (float(wp) - float(wm))
        ad = grads[name][idx]
        worst = max(worst, abs(ad - fd) / max(abs(fd), abs(ad), 1e-6))
    return worst


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradient_suite(seed):
    rng = np.random.default_rng(seed)
    x_flat = rng.standard_normal((4, 9)).astype(np.float32)
    x_seq = rng.standard_normal((2, 6, 9)).astype(np.float32)

    w_flat = rng.standard_normal((4, 5))
    w_seq = rng.standard_normal((2, 6, 4))

    ps = init_mlp([9, 12, 5], np.random.default_rng(seed))
    assert _finite_diff_check(
        ps, lambda lv: (forward_mlp(lv, x_flat) * Tensor(w_flat)).sum(),
        rng) < 1e-4

    tc = TransformerConfig(in_width=9, out_width=4, n_layers=2, hidden=16,
                           intermediate=32, window=8)
    ps = init_transformer(tc, np.random.default_rng(seed))
    assert _finite_diff_check(
        ps, lambda lv: (forward_causal_attention(lv, x_seq, tc)
                        * Tensor(w_seq)).sum(), rng) < 1e-4

    rc = RecurrentConfig(in_width=9, out_width=4, hidden=16, window=8)
    ps = init_recurrent(rc, np.random.default_rng(seed))
    assert _finite_diff_check(
        ps, lambda lv: (forward_recurrent(lv, x_seq, rc)
                        * Tensor(w_seq)).sum(), rng) < 1e-4


# -- 2. success-tracker oracle ----------------------------------------


def _oracle_declarations(bits, t_bar=8):
    run = 0
    out = []
    for b in bits:
        run = run + 1 if b else 0
        out.append(run >= t_bar)
    return np.array(out)


def _tracker_declarations(bits):
    tracker = SuccessTracker(n=1)
    out = []
    for b in bits:
        out.append(bool(update_success_tracker(
            tracker, np.array([b]), np.array([True]))[0]))
    return np.array(out)


def test_tracker_oracle_exhaustive():
    for length in range(1, 17):
        codes = np.arange(2 ** length)[:, None]
        bits = (codes >> np.arange(length)) & 1   # (2^L, L)
        tracker = SuccessTracker(n=len(codes))
        got = np.zeros((len(codes), length), dtype=bool)
        for t in range(length):
            got[:, t] = update_success_tracker(
                tracker, bits[:, t].astype(bool),
                np.ones(len(codes), dtype=bool))
        run = np.zeros(len(codes), dtype=np.int64)
        for t in range(length):
            run = np.where(bits[:, t] == 1, run + 1, 0)
            assert np.array_equal(got[:, t], run >= 8)


def test_tracker_oracle_random():
    rng = np.random.default_rng(0)
    bits = rng.random((10_000, 50)) < 0.7
    tracker = SuccessTracker(n=10_000)
    run = np.zeros(10_000, dtype=np.int64)
    for t in range(50):
        got = update_success_tracker(tracker, bits[:, t],
                                     np.ones(10_000, dtype=bool))
        run = np.where(bits[:, t], run + 1, 0)
        assert np.array_equal(got, run >= 8)


def test_tracker_single_sequence_paths():
    rng = np.random.default_rng(1)
    for _ in range(50):
        bits = rng.random(50) < 0.7
        assert np.array_equal(_tracker_declarations(bits),
                              _oracle_declarations(bits))


# -- 3. interpolation scheme ------------------------------------------


def _reversal_stream(scheme, e, a, n_substeps, cycles=8):
    pipe = CommandPipeline(scheme=scheme, n_substeps=n_substeps)
    q = np.zeros(1)
    stream = [q.copy()]
    for k in range(cycles):
        act = np.array([a if k % 2 == 0 else -a])
        pts = pipe.step(q, act)
        stream.extend(pts)
        q = pipe.q_cmd_prev - e * np.sign(act)   # plant lags the command
    return np.array(stream)


def test_interpolation_command_ref_jump_exact():
    # dyadic action and substep count: every float op is exact, so the
    # command-referenced jump equals max|a|/N bit for bit
    a, n = 0.09375, 4
    stream = _reversal_stream(COMMAND_REF, e=0.001953125, a=a,
                              n_substeps=n)
    assert setpoint_jump_metric(stream)[0] == a / n


def test_interpolation_scheme_ordering():
    for e in (1e-3, 3e-3, 0.01, 0.05):
        for a, n in ((0.1, 5), (0.06, 5), (0.09375, 4)):
            jc = setpoint_jump_metric(
                _reversal_stream(COMMAND_REF, e, a, n))[0]
            jm = setpoint_jump_metric(
                _reversal_stream(MEASURED_REF, e, a, n))[0]
            assert jc <= a / n + 1e-12
            assert jc < jm


# -- 4. teacher training ----------------------------------------------


def test_teacher_easy_config(teacher_run):
    assert teacher_run["elapsed_s"] <= 1800
    assert teacher_run["best"] >= 0.70


@pytest.mark.slow
def test_teacher_full_config(tmp_path):
    cfg = TrainConfig(**{**EASY_TRAIN,
                         "total_steps": 10_000_000,
                         "eval_every": 250_000,
                         "randomize": True, "perturb": True})
    t0 = time.monotonic()
    _, curve, _ = train_teacher(cfg, env_cfg=EnvConfig().finalize(),
                                out_dir=str(tmp_path / "full"))
    assert time.monotonic() - t0 <= 3 * 3600
    assert _curve_best(curve) >= 0.50


# -- 5. student distillation ------------------------------------------


def test_student_matches_teacher_and_stops(teacher_run, student_run):
    cfg = replace(student_run["cfg"], eval_episodes=50)
    ev = evaluate_student(student_run["params"], student_run["arch"],
                          _easy_env(), cfg, seed=321)
    assert ev["success_rate"] >= 0.8 * teacher_run["best"]
    assert ev["stop_within_rate"] >= 0.90


# -- 6. hold test ------------------------------------------------------


def test_hold_trained_vs_random(student_run):
    env_cfg = _easy_env()
    cfg = student_run["cfg"]
    trained = hold_test(student_run["params"], student_run["arch"],
                        env_cfg, cfg, trials=20, seed=11)
    baseline = hold_test(None, None, env_cfg, cfg, trials=20, seed=11,
                         random_policy=True)
    assert trained["pass_rate"] >= 0.80
    assert baseline["pass_rate"] < 0.30


# -- 7. monotonic travel distance -------------------------------------


def test_travel_monotone_in_commanded_time(student_run):
    env_cfg = _easy_env()
    cfg = student_run["cfg"]
    short = eval_reorient(student_run["params"], student_run["arch"],
                          env_cfg, cfg, stop_time_s=3.5, trials=10,
                          seed=17)
    long = eval_reorient(student_run["params"], student_run["arch"],
                         env_cfg, cfg, stop_time_s=7.0, trials=10,
                         seed=17)
    assert long["median"] > short["median"]


# -- 8. ablation orderings --------------------------------------------


def _mean_steps(rows, arm, cap):
    vals = [cap if r["steps_to_threshold"] in ("", None)
            else r["steps_to_threshold"]
            for r in rows if r["arm"] == arm and not r["diverged"]]
    return np.mean(vals) if vals else np.inf


def _mean_final(rows, arm):
    vals = [r["final_success"] for r in rows
            if r["arm"] == arm and not r["diverged"]]
    return np.mean(vals) if vals else -np.inf


@pytest.mark.slow
def test_ablation_demo_term(tmp_path):
    from reorient.harness import run_ablation

    cap = 2_000_000
    cfg = TrainConfig(**{**EASY_TRAIN, "total_steps": cap})
    rows, _ = run_ablation("demo-term", [0, 1, 2], str(tmp_path / "ab"),
                           env_cfg=_easy_env(), train_cfg=cfg)
    assert _mean_steps(rows, "demo_on", cap) \
        < _mean_steps(rows, "demo_off", cap)


@pytest.mark.slow
def test_ablation_joint_velocity(tmp_path, teacher_run):
    from reorient.harness import run_ablation

    cfg = DaggerConfig(**STUDENT_CFG)
    rows, _ = run_ablation("joint-velocity", [0, 1, 2],
                           str(tmp_path / "ab"), env_cfg=_easy_env(),
                           dagger_cfg=cfg,
                           teacher_ckpt=teacher_run["ckpt"])
    assert _mean_final(rows, "qdot_on") >= _mean_final(rows, "qdot_off")


@pytest.mark.slow
def test_ablation_architecture(tmp_path, teacher_run):
    from reorient.harness import run_ablation

    cfg = DaggerConfig(**STUDENT_CFG)
    rows, _ = run_ablation("architecture", [0, 1, 2],
                           str(tmp_path / "ab"), env_cfg=_easy_env(),
                           dagger_cfg=cfg,
                           teacher_ckpt=teacher_run["ckpt"])
    assert _mean_final(rows, "transformer") \
        >= _mean_final(rows, "recurrent")


# -- 9. peel-path geometry --------------------------------------------


def _random_shape_and_scene(rng):
    a = rng.uniform(0.08, 0.12)
    # minor axes wide enough that the 2 cm central slab is locally flat
    b = rng.uniform(0.04, 0.055)
    c = rng.uniform(0.02, 0.035)
    yaw = rng.uniform(0, 2 * np.pi)
    cy, sy = np.cos(yaw), np.sin(yaw)
    rot = np.array([[cy, -sy, 0.0], [sy, cy, 0.0], [0.0, 0.0, 1.0]])
    shape = Superellipsoid(
        semi_axes=(a, b, c), exponent=rng.uniform(2.0, 3.0),
        rotation=rot, translation=rng.uniform(-0.02, 0.02, size=3))
    camera = Camera(fx=200.0, fy=200.0, cx=45.0, cy=45.0,
                    width=91, height=91,
                    rotation=np.array([[1.0, 0.0, 0.0],
                                       [0.0, -1.0, 0.0],
                                       [0.0, 0.0, -1.0]]),
                    translation=np.array([0.0, 0.0, 0.6])
                    + shape.translation * [1, 1, 0])
    return shape, render_synthetic(shape, camera)


def test_peel_geometry_random_shapes():
    rng = np.random.default_rng(0)
    for _ in range(20):
        shape, scene = _random_shape_and_scene(rng)
        cloud = backproject(scene)
        axis, centroid = principal_axis(cloud)
        truth = shape.principal_axis_world
        angle = np.degrees(np.arccos(
            np.clip(abs(axis @ truth), -1.0, 1.0)))
        assert angle <= 2.0

        # slice membership against the analytic slab rule
        pts2d = slice_and_project(cloud, axis, centroid)
        up = np.array([0.0, 0.0, 1.0])
        v = up - (up @ axis) * axis
        v /= np.linalg.norm(v)
        n = np.cross(axis, v)
        n /= np.linalg.norm(n)
        rel = cloud.points - centroid
        assert len(pts2d) == int((np.abs(rel @ n) <= 0.01).sum())

        # clean fit: every emitted waypoint lies on the true surface
        traj = peel_pipeline(scene)
        assert np.all(shape.surface_distance(traj.waypoints) <= 3e-3)

        # noisy depth: spline residual stays at the noise scale
        noisy = scene.depth + np.where(
            scene.mask, rng.normal(0.0, 1e-3, scene.depth.shape), 0.0)
        nscene = DepthScene(depth=np.maximum(noisy, 0.0),
                            mask=scene.mask & (noisy > 0),
                            camera=scene.camera)
        ncloud = backproject(nscene)
        naxis, ncentroid = principal_axis(ncloud)
        curve = fit_spline(slice_and_project(ncloud, naxis, ncentroid))
        assert curve.rms_residual <= 2e-3


# -- 10. determinism --------------------------------------------------


def test_metrics_byte_identical_on_rerun(student_run, tmp_path):
    cfg_path = tmp_path / "exp.cfg"
    cfg_path.write_text(
        "[student]\nwindow = 32\nhidden = 64\nn_layers = 2\n"
        "eval_episodes = 16\n")
    outs = []
    for name in ("r1", "r2"):
        out = str(tmp_path / name)
        code = subprocess.call(
            [sys.executable, "-m", "reorient.cli", "eval-reorient",
             "--config", str(cfg_path), "--student", student_run["ckpt"],
             "--stop-time", "2.0", "--trials", "4", "--seed", "5",
             "--out", out])
        assert code == 0
        outs.append(out)
    for fname in ("metrics.jsonl", "travel.csv"):
        b1 = open(os.path.join(outs[0], fname), "rb").read()
        b2 = open(os.path.join(outs[1], fname), "rb").read()
        assert b1 == b2
