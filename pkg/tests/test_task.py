"""Task semantics tests: reward, success tracking, resets, sampling."""

import numpy as np
import pytest
from scipy import stats

from reorient.sim import EnvConfig
from reorient.task import (
    DISPLACED, DROPPED, JOINT_FAULT, DomainRanges, ReorientTask,
    ResetLimits, RewardCoeffs, SuccessTracker, check_reset,
    randomize_domain, reward, sample_goal, sample_perturbation, stop_label,
    update_success_tracker,
)


# -- reward ------------------------------------------------------------


def test_reward_success_at_keyframe():
    coeffs = RewardCoeffs()
    q_demo = np.array([0.1, -0.2, 0.0, 0.3, -0.1, 0.2])
    total, _ = reward(1, 0.2, q_demo, q_demo, coeffs)
    assert abs(total - 805.0) < 1e-12


def test_reward_vanishes_far_from_goal():
    coeffs = RewardCoeffs()
    q_demo = np.zeros(6)
    total, _ = reward(0, 1e9, q_demo, q_demo, coeffs)
    assert 0 < total < 1e-8


def test_reward_mixed_terms():
    coeffs = RewardCoeffs()
    q_demo = np.zeros(6)
    q = np.zeros(6)
    q[0] = 1.0                      # squared deviation 1
    total, terms = reward(0, 0.9, q, q_demo, coeffs)
    assert abs(total - 0.9) < 1e-12
    assert abs(terms[1] - 1.5) < 1e-12
    assert abs(terms[2] + 0.6) < 1e-12


def test_reward_monotone_in_pose_deviation():
    coeffs = RewardCoeffs()
    q_demo = np.zeros(6)
    prev = None
    for scale in np.linspace(0.0, 2.0, 9):
        total, _ = reward(0, 0.5, q_demo + scale, q_demo, coeffs)
        if prev is not None:
            assert total < prev
        prev = total


def test_reward_monotone_in_dtheta():
    coeffs = RewardCoeffs()
    q_demo = np.zeros(6)
    prev = None
    for dtheta in np.linspace(3.0, 0.0, 13):
        total, _ = reward(0, dtheta, q_demo, q_demo, coeffs)
        if prev is not None:
            assert total > prev
        prev = total


def test_reward_coeff_validation():
    with pytest.raises(ValueError):
        RewardCoeffs(c3=0.1)
    with pytest.raises(ValueError):
        RewardCoeffs(eps_theta=0.0)


# -- success tracker ---------------------------------------------------


def test_tracker_declares_on_eighth():
    tr = SuccessTracker(n=1)
    for step in range(8):
        declared = update_success_tracker(tr, [True], [True])
        assert declared[0] == (step == 7)


def test_tracker_resets_on_failure():
    tr = SuccessTracker(n=1)
    for _ in range(7):
        update_success_tracker(tr, [True], [True])
    declared = update_success_tracker(tr, [False], [True])
    assert not declared[0]
    assert tr.counter[0] == 0


def test_tracker_needs_both_criteria():
    tr = SuccessTracker(n=1)
    for _ in range(20):
        declared = update_success_tracker(tr, [True], [False])
        assert not declared[0]


def _run_length_oracle(seq, t_bar=8):
    out = []
    run = 0
    for ok in seq:
        run = run + 1 if ok else 0
        out.append(run >= t_bar)
    return out


def test_tracker_exhaustive_short_sequences():
    # every boolean sequence up to length 16, batched
    for length in range(1, 17):
        n = 2 ** length
        bits = ((np.arange(n)[:, None] >> np.arange(length)) & 1).astype(bool)
        tr = SuccessTracker(n=n)
        run = np.zeros(n, dtype=np.int64)
        for t in range(length):
            declared = update_success_tracker(tr, bits[:, t], np.ones(n, bool))
            run = np.where(bits[:, t], run + 1, 0)
            assert np.array_equal(declared, run >= 8)


def test_tracker_random_long_sequences():
    rng = np.random.default_rng(0)
    n = 10_000
    seqs = rng.random((n, 50)) < 0.7
    tr = SuccessTracker(n=n)
    run = np.zeros(n, dtype=np.int64)
    for t in range(50):
        declared = update_success_tracker(tr, seqs[:, t], np.ones(n, bool))
        run = np.where(seqs[:, t], run + 1, 0)
        assert np.array_equal(declared, run >= 8)


def test_tracker_progress_bounded():
    tr = SuccessTracker(n=1)
    for _ in range(30):
        update_success_tracker(tr, [True], [True])
        assert 0.0 <= tr.progress[0] <= 1.0


# -- stop label --------------------------------------------------------


def test_stop_label_examples():
    assert stop_label(0.25) == 0
    assert stop_label(0.1) == 1
    assert stop_label(0.2) == 1    # boundary: rule is strict ">"


def test_stop_label_monotone():
    grid = np.linspace(0.0, 1.0, 101)
    labels = stop_label(grid)
    assert np.all(np.diff(labels) <= 0)


# -- reset constraints -------------------------------------------------


def _fresh_task(n=1, seed=0):
    return ReorientTask(EnvConfig(), n, seed=seed)


def test_check_reset_clean_state():
    task = _fresh_task()
    reasons = check_reset(task.env, task.limits)
    assert reasons[0] is None


def test_check_reset_displaced():
    task = _fresh_task()
    task.env.obj_pos[0] += [0.06, 0.0]
    assert check_reset(task.env, task.limits)[0] == DISPLACED


def test_check_reset_dropped():
    task = _fresh_task()
    task.env.obj_pos[0] = [0.0, -0.01]
    assert check_reset(task.env, task.limits)[0] == DROPPED


def test_check_reset_joint_fault():
    task = _fresh_task()
    task.env.pinned_steps[0] = 12
    assert check_reset(task.env, task.limits)[0] == JOINT_FAULT


def test_reset_limits_validation():
    with pytest.raises(ValueError):
        ResetLimits(max_displacement=0.0)


# -- sampling ----------------------------------------------------------


def test_sample_goal_range_and_mean():
    rng = np.random.default_rng(0)
    g = sample_goal(rng, n=10_000)
    assert g.min() >= 1.57 and g.max() <= 4.0
    assert abs(g.mean() - 2.785) < 0.02


def test_sample_goal_seeded():
    a = sample_goal(np.random.default_rng(5), n=10)
    b = sample_goal(np.random.default_rng(5), n=10)
    assert np.array_equal(a, b)


def test_sample_goal_signs():
    rng = np.random.default_rng(1)
    neg = sample_goal(rng, n=100, sign="negative")
    assert np.all(neg < 0)
    mixed = sample_goal(rng, n=1000, sign="random")
    assert (mixed > 0).any() and (mixed < 0).any()
    assert np.all(np.abs(mixed) >= 1.57)


def test_sample_perturbation_magnitude():
    rng = np.random.default_rng(0)
    f = sample_perturbation(0.5, rng)
    assert abs(np.linalg.norm(f) - 5.0) < 1e-12


def test_sample_perturbation_direction_uniform():
    rng = np.random.default_rng(0)
    angles = []
    for _ in range(1000):
        f = sample_perturbation(1.0, rng)
        angles.append(np.arctan2(f[1], f[0]))
    counts, _ = np.histogram(angles, bins=8, range=(-np.pi, np.pi))
    assert stats.chisquare(counts).pvalue > 0.01


def test_sample_perturbation_magnitude_seed_invariant():
    for seed in range(5):
        f = sample_perturbation(0.3, np.random.default_rng(seed))
        assert abs(np.linalg.norm(f) - 3.0) < 1e-12


def test_randomize_domain_collapsed_ranges():
    ranges = DomainRanges(mass=(0.3, 0.3), mu=(0.8, 0.8), kp=(3.0, 3.0),
                          kd=(0.1, 0.1), cn=(50.0, 50.0))
    overrides, _, _ = randomize_domain(ranges, np.random.default_rng(0), n=5)
    assert np.allclose(overrides["mass"], 0.3)
    assert np.allclose(overrides["mu"], 0.8)
    assert np.allclose(overrides["kp"], 3.0)


def test_randomize_domain_mass_range():
    overrides, _, _ = randomize_domain(
        DomainRanges(), np.random.default_rng(1), n=1000)
    assert overrides["mass"].min() >= 0.08
    assert overrides["mass"].max() <= 0.96


def test_randomize_domain_seeded_and_logged():
    a, sa, la = randomize_domain(DomainRanges(), np.random.default_rng(2), n=8)
    b, sb, lb = randomize_domain(DomainRanges(), np.random.default_rng(2), n=8)
    assert np.array_equal(sa, sb)
    for k in a:
        assert np.array_equal(a[k], b[k])
    assert la == lb
    assert set(la) == {"mass", "mu", "kp", "kd", "cn", "spec_idx"}


# -- teacher observation -----------------------------------------------


def test_teacher_obs_width_and_reset_slots():
    task = _fresh_task(n=3, seed=2)
    obs = task.observe()
    assert obs.shape == (3, 43)
    assert np.allclose(obs[:, 31], task.env.goal_theta)  # dtheta slot
    assert np.allclose(obs[:, 35], 0.0)                  # progress slot
    assert np.allclose(obs[:, 42], task.env.goal_theta)  # goal slot


def test_teacher_obs_contact_slots_binary():
    task = _fresh_task(n=2, seed=3)
    for _ in range(8):
        out = task.step(np.zeros((2, 6)))
    assert np.isin(out["obs"][:, 32:35], [0.0, 1.0]).all()


def test_task_step_terminates_on_drop():
    task = _fresh_task(n=1, seed=4)
    # rip the fingers open so the object falls
    for _ in range(60):
        out = task.step(np.tile([0.1, 0.1, 0.0, -0.1, -0.1, -0.1], (1, 1)))
        if out["done"][0]:
            break
    assert out["done"][0]
    assert out["reasons"][0] in (DROPPED, DISPLACED, JOINT_FAULT)
    # auto-reset: fresh episode state
    assert task.steps[0] == 0
    assert np.allclose(task.prev_action[0], 0.0)


def test_task_success_pays_bonus_once_and_resets():
    task = _fresh_task(n=1, seed=5)
    # force the success condition instead of rotating for real
    task.env.goal_theta[0] = task.env.obj_theta[0]
    bonuses = 0
    for _ in range(12):
        out = task.step(np.zeros((1, 6)))
        if out["success"][0]:
            bonuses += 1
            assert out["reward"][0] > 700
            assert out["done"][0]
            break
        task.env.goal_theta[0] = task.env.obj_theta[0]  # pin the goal
    assert bonuses == 1
