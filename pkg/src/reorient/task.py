"""Reorientation task semantics on top of the planar simulation.

Reward with a single keyframe demonstration, time-extended success with
the progress scalar, reset constraints, goal and perturbation sampling,
stop-signal labeling, and domain randomization. Everything is batched
over environments.
"""

from dataclasses import dataclass, field

import numpy as np

from .sim import VecEnv, forward_kinematics

# episode termination reasons
SUCCESS = "SUCCESS"
DISPLACED = "DISPLACED"
DROPPED = "DROPPED"
TIMEOUT = "TIMEOUT"
JOINT_FAULT = "JOINT_FAULT"

GOAL_LO = 1.57
GOAL_HI = 4.0

TEACHER_OBS_WIDTH = 43
TEACHER_OBS_LAYOUT = (
    "q[0:6] qdot[6:12] tip_pos[12:18] tip_vel[18:24] "
    "obj_xy_sincos[24:28] obj_vel[28:31] dtheta[31] contact[32:35] "
    "succ_progress[35] prev_action[36:42] goal[42]")
TEACHER_OBS_VERSION = 1


@dataclass
class RewardCoeffs:
    """Coefficients of the three-term reward."""

    c1: float = 800.0      # terminal success bonus
    c2: float = 1.5        # dense orientation shaping
    c3: float = -0.6       # keyframe-deviation regularizer
    eps_theta: float = 0.1  # rad, caps the dense term at c2/eps_theta

    def __post_init__(self):
        if self.c1 <= 0 or self.c2 <= 0:
            raise ValueError("c1 and c2 must be positive")
        if self.c3 > 0:
            raise ValueError("c3 must not be positive (0 disables the "
                             "keyframe term)")
        if self.eps_theta <= 0:
            raise ValueError("eps_theta must be positive")


@dataclass
class SuccessTracker:
    """Consecutive-satisfaction counter for the success criteria.

    Both the orientation criterion and the contact criterion must hold
    for t_bar consecutive policy steps; progress = counter / t_bar is
    exposed to the policy.
    """

    n: int = 1
    theta_bar: float = 0.2   # rad
    t_bar: int = 8           # consecutive steps required
    counter: np.ndarray = None

    def __post_init__(self):
        if self.counter is None:
            self.counter = np.zeros(self.n, dtype=np.int64)

    @property
    def progress(self):
        return self.counter / self.t_bar

    def reset(self, idx):
        self.counter[idx] = 0


def update_success_tracker(tracker, c_ori, c_contact):
    """Advance the counter; returns the per-env success declarations."""
    both = np.asarray(c_ori, dtype=bool) & np.asarray(c_contact, dtype=bool)
    tracker.counter = np.where(both, tracker.counter + 1, 0)
    declared = tracker.counter >= tracker.t_bar
    tracker.counter = np.minimum(tracker.counter, tracker.t_bar)
    return declared


def reward(success, dtheta, q, q_demo, coeffs):
    """Three-term reward: success bonus, dense shaping, pose regularizer.

    Accepts scalars or batched arrays; returns the total and the three
    addends (for trace logging).
    """
    success = np.asarray(success, dtype=float)
    dtheta = np.abs(np.asarray(dtheta, dtype=float))
    dq = np.asarray(q, dtype=float) - np.asarray(q_demo, dtype=float)
    bonus = coeffs.c1 * success
    dense = coeffs.c2 / (dtheta + coeffs.eps_theta)
    penalty = coeffs.c3 * np.sum(dq * dq, axis=-1)
    return bonus + dense + penalty, (bonus, dense, penalty)


@dataclass
class ResetLimits:
    max_displacement: float = 0.05   # m, CoM drift from the start pose
    min_height: float = 0.0          # m, palm line
    pinned_steps: int = 12           # policy steps stuck at a joint limit

    def __post_init__(self):
        if self.max_displacement <= 0 or self.pinned_steps <= 0:
            raise ValueError("limits must be positive")


def check_reset(env, limits):
    """Constraint violations per environment.

    Returns an object array: None where no constraint fired, otherwise
    one of DISPLACED / DROPPED / JOINT_FAULT.
    """
    reasons = np.full(env.n, None, dtype=object)
    disp = np.linalg.norm(env.obj_pos - env.com0, axis=1)
    reasons[env.pinned_steps >= limits.pinned_steps] = JOINT_FAULT
    reasons[disp > limits.max_displacement] = DISPLACED
    reasons[env.obj_pos[:, 1] < limits.min_height] = DROPPED
    return reasons


def sample_goal(rng, n=None, sign="positive", hi=None):
    """Target rotation magnitudes, uniform on [1.57, 4.0] rad.

    sign picks the per-episode rotation direction: "positive" (default),
    "negative", or "random". hi lowers the upper bound (training
    curricula); evaluation always uses the full range.
    """
    g = rng.uniform(GOAL_LO, hi if hi is not None else GOAL_HI, size=n)
    if sign == "negative":
        return -g
    if sign == "random":
        return g * np.where(rng.random(size=n) < 0.5, -1.0, 1.0)
    return g


def stop_label(dtheta, theta_bar=0.2):
    """1 once the remaining rotation is within theta_bar, else 0."""
    return np.where(np.asarray(dtheta, dtype=float) > theta_bar, 0, 1)


def sample_perturbation(m_o, rng):
    """Planar disturbance force: random direction, magnitude 10 * m_o."""
    if m_o <= 0:
        raise ValueError("object mass must be positive")
    ang = rng.uniform(0.0, 2 * np.pi)
    return 10.0 * m_o * np.array([np.cos(ang), np.sin(ang)])


@dataclass
class DomainRanges:
    """Sampling ranges for per-episode physics randomization.

    Collapse a range to a point to disable that axis. Contact damping
    stands in for restitution (the penalty model has no restitution
    coefficient; damping controls the same bounce behavior).
    """

    mass: tuple = (0.08, 0.96)     # kg
    mu: tuple = (0.6, 1.0)
    kp: tuple = (2.4, 3.6)
    kd: tuple = (0.08, 0.12)
    cn: tuple = (40.0, 60.0)       # N s/m
    n_shapes: int = 30             # catalog prefix to sample from


def randomize_domain(ranges, rng, n=1):
    """Sample per-episode physics; returns (overrides, spec_idx, log)."""
    overrides = {
        "mass": rng.uniform(*ranges.mass, size=n),
        "mu": rng.uniform(*ranges.mu, size=n),
        "kp": rng.uniform(*ranges.kp, size=n),
        "kd": rng.uniform(*ranges.kd, size=n),
        "cn": rng.uniform(*ranges.cn, size=n),
    }
    spec_idx = rng.integers(0, ranges.n_shapes, size=n)
    log = {k: v.tolist() for k, v in overrides.items()}
    log["spec_idx"] = spec_idx.tolist()
    return overrides, spec_idx, log


def teacher_observe(env, tracker, prev_action, contact_flags):
    """Full-state observation for the teacher policy, width 43."""
    tips, tipvel = forward_kinematics(env.cfg.hand, env.q, env.qdot)
    n = env.n
    obs = np.concatenate([
        env.q,
        env.qdot,
        tips.reshape(n, 6),
        tipvel.reshape(n, 6),
        env.obj_pos,
        np.sin(env.obj_theta)[:, None],
        np.cos(env.obj_theta)[:, None],
        env.obj_vel,
        env.obj_omega[:, None],
        env.delta_theta()[:, None],
        contact_flags.astype(float),
        tracker.progress[:, None],
        prev_action,
        env.goal_theta[:, None],
    ], axis=1)
    assert obs.shape[1] == TEACHER_OBS_WIDTH
    return obs


class ReorientTask:
    """Vectorized episode driver: simulation plus task semantics.

    Auto-resets finished environments, pays the success bonus once (the
    episode ends on declaration), and reports per-step reward terms and
    termination reasons.
    """

    def __init__(self, cfg, n_envs, seed=0, coeffs=None, limits=None,
                 goal_sign="positive", ranges=None, perturb=False,
                 success_terminates=True):
        self.env = VecEnv(cfg, n_envs, seed=seed)
        self.n = n_envs
        self.coeffs = coeffs or RewardCoeffs()
        self.limits = limits or ResetLimits()
        self.goal_sign = goal_sign
        self.goal_hi = None             # training-time goal ceiling
        self.ranges = ranges            # None disables randomization
        self.perturb = perturb
        # distillation keeps episodes alive past success so the dataset
        # contains held states; training pays the bonus once and stops
        self.success_terminates = success_terminates
        self.rng = np.random.default_rng(seed + 1)
        self.tracker = SuccessTracker(n=n_envs)
        self.prev_action = np.zeros((n_envs, 6))
        self.steps = np.zeros(n_envs, dtype=np.int64)
        self.contact_flags = np.zeros((n_envs, 3), dtype=bool)
        self.episode_log = []           # (env index, reason) per episode
        self.reset(np.arange(n_envs))

    def reset(self, idx):
        idx = np.asarray(idx, dtype=np.int64)
        if len(idx) == 0:
            return
        goals = sample_goal(self.rng, n=len(idx), sign=self.goal_sign,
                            hi=self.goal_hi)
        if self.ranges is not None:
            overrides, spec_idx, _ = randomize_domain(
                self.ranges, self.rng, n=len(idx))
            self.env.reset_indices(idx, goals, spec_indices=spec_idx,
                                   overrides=overrides)
        else:
            self.env.reset_indices(idx, goals)
        self.tracker.reset(idx)
        self.prev_action[idx] = 0.0
        self.steps[idx] = 0
        self.contact_flags[idx] = False
        if self.perturb:
            for i in idx:
                if self.rng.random() < 0.2:
                    self.env.apply_perturbation(
                        [i], sample_perturbation(self.env.mass[i], self.rng))

    def observe(self):
        return teacher_observe(self.env, self.tracker, self.prev_action,
                               self.contact_flags)

    def step(self, actions):
        info = self.env.step_policy(actions)
        self.contact_flags = info["contact_flags"]
        self.steps += 1
        dtheta = self.env.delta_theta()
        c_ori = dtheta <= self.tracker.theta_bar
        c_contact = self.contact_flags.all(axis=1)
        declared = update_success_tracker(self.tracker, c_ori, c_contact)
        total, (bonus, dense, penalty) = reward(
            declared, dtheta, self.env.q, self.env.cfg.q_demo, self.coeffs)
        reasons = check_reset(self.env, self.limits)
        reasons[info["nan_mask"]] = JOINT_FAULT
        reasons[self.steps >= self.env.cfg.horizon] = TIMEOUT
        if self.success_terminates:
            reasons[declared] = SUCCESS
        done = np.array([r is not None for r in reasons])
        self.prev_action = info["action"].copy()
        for i in np.flatnonzero(done):
            self.episode_log.append((int(i), reasons[i]))
        self.reset(np.flatnonzero(done))
        return {
            "reward": total,
            "reward_terms": (bonus, dense, penalty),
            "done": done,
            "reasons": reasons,
            "dtheta": dtheta,
            "success": declared,
            "obs": self.observe(),
        }
