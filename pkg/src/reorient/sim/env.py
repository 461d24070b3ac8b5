"""Vectorized planar hand + object simulation.

A rigid convex object under gravity is manipulated by three two-link
fingers through penalty contacts. The inner loop runs at 300 Hz; policy
actions arrive at 12 Hz and are interpolated to 60 Hz set-points (5
inner ticks per set-point, 25 per policy step).

All state is batched over environments (leading axis n). Environments
are fully independent; nothing is shared between rows.
"""

from dataclasses import dataclass, field

import numpy as np

from ..control import COMMAND_REF, MEASURED_REF, interpolate_commands
from .kinematics import HandModel, forward_kinematics, jacobians, ik_finger
from .shapes import ObjectSpec, shape_catalog


class SimFault(RuntimeError):
    """Raised when the simulation state becomes non-finite."""


@dataclass
class EnvConfig:
    hand: HandModel = field(default_factory=HandModel)
    shapes: list = field(default_factory=shape_catalog)
    dt: float = 1.0 / 300.0
    inner_per_policy: int = 25
    n_substeps: int = 5            # interpolated set-points per action
    scheme: str = COMMAND_REF
    kp: float = 3.0
    kd: float = 0.1
    torque_limit: float = 2.0
    joint_inertia: float = 2e-3
    joint_damping: float = 2e-2
    kn: float = 5000.0
    cn: float = 50.0
    kt: float = 100.0
    gravity: float = 9.81
    action_bound: float = 0.1
    horizon: int = 240
    reset_noise: float = 0.02      # rad, on the keyframe joints
    reset_penetration_tol: float = 2e-3
    # filled in by finalize(): keyframe grasp and object rest height
    q_demo: np.ndarray | None = None
    rest_height: float | None = None
    # grasp design: superellipse parameter angles of the three contacts
    contact_params: tuple = (4.05, 4.7124, 5.55)
    grasp_penetration: float = 4e-4

    def finalize(self):
        """Compute the keyframe grasp for the median catalog shape."""
        if self.q_demo is None:
            spec = self.shapes[len(self.shapes) // 2]
            self.q_demo, self.rest_height = design_keyframe(
                self.hand, spec, self.contact_params, self.grasp_penetration)
        return self


def _surface_point(spec, t):
    c, s = np.cos(t), np.sin(t)
    p = spec.exponent
    return np.array([spec.a * np.sign(c) * np.abs(c) ** (2.0 / p),
                     spec.b * np.sign(s) * np.abs(s) ** (2.0 / p)])


def design_keyframe(hand, spec, contact_params, penetration):
    """Pose the hand in a tripod cradle under the object.

    Returns (q_demo, rest_height): joints contacting the object's lower
    arc with slight penetration, and the object-center height they
    support. Contacts stay on the lower half so the top arc is free.
    """
    # rest height: bottom of the object a little above half finger reach
    rest_height = spec.b + 0.055
    center = np.array([0.0, rest_height])
    q = np.zeros(6)
    for f, t in enumerate(contact_params):
        surf = _surface_point(spec, t)
        # aim slightly inside the surface, toward the center
        target = center + surf * (1.0 - penetration / np.linalg.norm(surf))
        # elbow away from the object midline
        elbow = -1.0 if hand.bases[f, 0] < 0 else 1.0
        try:
            q[2 * f:2 * f + 2] = ik_finger(hand, f, target, elbow=elbow)
        except ValueError:
            q[2 * f:2 * f + 2] = ik_finger(hand, f, target, elbow=-elbow)
    return q, rest_height


def contact_forces(pos, theta, vel, omega, verts, normals, offsets, mu,
                   tips, tipvel, kn, cn, kt, minor_radius,
                   mass=None, inertia=None, dt=None, jac=None,
                   joint_inertia=None):
    """Penalty contact between fingertips and the object polygon.

    Returns a dict with per-tip report fields, the net force/torque on
    the object, and the reaction force on each fingertip.

    When mass/inertia/dt are given, the viscous stiction force is
    additionally capped at the impulse that would cancel the contact's
    tangential relative velocity in one tick (reduced-mass cap); without
    it the viscous term is unstable against the small rotational inertia
    at 300 Hz.
    """
    n = pos.shape[0]
    c, s = np.cos(theta), np.sin(theta)
    p_rel = tips - pos[:, None]                       # (n, 3, 2) world
    px = c[:, None] * p_rel[..., 0] + s[:, None] * p_rel[..., 1]
    py = -s[:, None] * p_rel[..., 0] + c[:, None] * p_rel[..., 1]
    p_obj = np.stack([px, py], axis=-1)               # object frame
    sdist = np.einsum("nfk,nmk->nfm", p_obj, normals) - offsets[:, None, :]
    smax = sdist.max(axis=2)
    edge = sdist.argmax(axis=2)
    inside = smax < 0.0
    pen = np.where(inside, -smax, 0.0)
    # simultaneous contact impulses add on the object; share the
    # stabilization budget between active contacts
    n_active = np.maximum(inside.sum(axis=1, keepdims=True), 1)
    n_obj = normals[np.arange(n)[:, None], edge]      # (n, 3, 2)
    nwx = c[:, None] * n_obj[..., 0] - s[:, None] * n_obj[..., 1]
    nwy = s[:, None] * n_obj[..., 0] + c[:, None] * n_obj[..., 1]
    n_world = np.stack([nwx, nwy], axis=-1)
    # velocity of the object material point under each tip
    v_point = vel[:, None] + omega[:, None, None] * \
        np.stack([-p_rel[..., 1], p_rel[..., 0]], axis=-1)
    v_rel = tipvel - v_point
    pen_rate = -np.einsum("nfk,nfk->nf", v_rel, n_world)
    cn_eff = cn
    if dt is not None:
        # same reduced-mass stabilization for the normal damping term
        lever_n = p_rel[..., 0] * n_world[..., 1] - p_rel[..., 1] * n_world[..., 0]
        inv_mn = 1.0 / mass[:, None] + lever_n ** 2 / inertia[:, None]
        if jac is not None:
            jn = np.einsum("nfkj,nfk->nfj", jac, n_world)
            inv_mn = inv_mn + (jn ** 2).sum(axis=-1) / joint_inertia
        cn_eff = np.minimum(cn, 0.9 / (n_active * inv_mn * dt))
    fn = np.clip(kn * pen + cn_eff * pen_rate, 0.0, None) * inside
    v_t = v_rel - np.einsum("nfk,nfk->nf", v_rel, n_world)[..., None] * n_world
    vt_norm = np.linalg.norm(v_t, axis=-1)
    t_hat = v_t / (vt_norm[..., None] + 1e-12)
    ft = np.minimum(mu[:, None] * fn, kt * vt_norm)
    if dt is not None:
        # lever arm of the tangential direction about the object CoM
        lever = p_rel[..., 0] * t_hat[..., 1] - p_rel[..., 1] * t_hat[..., 0]
        inv_m = 1.0 / mass[:, None] + lever ** 2 / inertia[:, None]
        if jac is not None:
            # fingertip recoils too: add its mobility along the slip
            jt = np.einsum("nfkj,nfk->nfj", jac, t_hat)
            inv_m = inv_m + (jt ** 2).sum(axis=-1) / joint_inertia
        ft = np.minimum(ft, 0.9 * vt_norm / (n_active * inv_m * dt))
    ft = ft * inside
    f_on_obj = -n_world * fn[..., None] + t_hat * ft[..., None]
    force = f_on_obj.sum(axis=1)
    torque = np.einsum("nf->n", p_rel[..., 0] * f_on_obj[..., 1]
                       - p_rel[..., 1] * f_on_obj[..., 0])
    return {
        "in_contact": inside & (fn > 0.0),
        "penetration": pen,
        "normal_force": fn,
        "tangential_force": ft,
        "tunneling": pen > 0.2 * minor_radius[:, None],
        "force_on_object": force,
        "torque_on_object": torque,
        "force_on_tips": -f_on_obj,
    }


class VecEnv:
    """Batch of independent planar reorientation environments."""

    def __init__(self, cfg, n_envs, seed=0):
        cfg.finalize()
        self.cfg = cfg
        self.n = n_envs
        self.rng = np.random.default_rng(seed)
        n = n_envs
        self.q = np.zeros((n, 6))
        self.qdot = np.zeros((n, 6))
        self.obj_pos = np.zeros((n, 2))
        self.obj_theta = np.zeros(n)      # unbounded accumulator
        self.obj_vel = np.zeros((n, 2))
        self.obj_omega = np.zeros(n)
        self.tick = np.zeros(n, dtype=np.int64)
        self.goal_theta = np.zeros(n)     # signed target rotation
        self.theta0 = np.zeros(n)
        self.com0 = np.zeros((n, 2))
        # interpolation pipeline state
        self.q_ref = np.zeros((n, 6))
        self.q_cmd_prev = np.full((n, 6), np.nan)
        # per-env physical parameters (domain randomization targets)
        self.spec_idx = np.zeros(n, dtype=np.int64)
        self.mass = np.zeros(n)
        self.inertia = np.zeros(n)
        self.mu = np.zeros(n)
        self.kp = np.full(n, cfg.kp)
        self.kd = np.full(n, cfg.kd)
        self.cn = np.full(n, cfg.cn)
        self.minor_radius = np.zeros(n)
        M = len(cfg.shapes[0].vertices)
        self.verts = np.zeros((n, M, 2))
        self.normals = np.zeros((n, M, 2))
        self.offsets = np.zeros((n, M))
        # perturbation force (world frame) active for a number of ticks
        self.perturb_force = np.zeros((n, 2))
        self.perturb_ticks = np.zeros(n, dtype=np.int64)
        self.pinned_steps = np.zeros(n, dtype=np.int64)
        # grasp keyframes per catalog shape (the demo pose fits only the
        # median shape; other variants need their own placement)
        self._grasp_cache = {}

    def _grasp(self, si):
        si = int(si)
        if si not in self._grasp_cache:
            self._grasp_cache[si] = design_keyframe(
                self.cfg.hand, self.cfg.shapes[si], self.cfg.contact_params,
                self.cfg.grasp_penetration)
        return self._grasp_cache[si]

    # -- reset ---------------------------------------------------------

    def set_object(self, idx, spec_indices):
        for i, si in zip(idx, spec_indices):
            spec = self.cfg.shapes[si]
            self.spec_idx[i] = si
            self.mass[i] = spec.mass
            self.inertia[i] = spec.inertia
            self.mu[i] = spec.friction
            self.minor_radius[i] = min(spec.a, spec.b)
            self.verts[i] = spec.vertices
            self.normals[i] = spec.edge_normals
            self.offsets[i] = spec.edge_offsets

    def reset_indices(self, idx, goals, spec_indices=None, overrides=None):
        """Reset the given environments.

        goals: signed target rotations (len(idx)). spec_indices picks the
        object variant (defaults to the median catalog entry). overrides
        may carry per-env sampled physics (mass, mu, kp, kd) from domain
        randomization.
        """
        cfg = self.cfg
        idx = np.asarray(idx, dtype=np.int64)
        if spec_indices is None:
            spec_indices = np.full(len(idx), len(cfg.shapes) // 2)
        self.set_object(idx, spec_indices)
        self.kp[idx] = cfg.kp
        self.kd[idx] = cfg.kd
        self.cn[idx] = cfg.cn
        if overrides:
            for key in ("mass", "mu", "kp", "kd", "cn"):
                if key in overrides:
                    getattr(self, key)[idx] = overrides[key]
            if "mass" in overrides:
                # rescale inertia with the sampled mass
                for j, i in enumerate(idx):
                    spec = cfg.shapes[spec_indices[j]]
                    self.inertia[i] = spec.inertia / spec.mass * self.mass[i]
        for j, i in enumerate(idx):
            base_q, rest_h = self._grasp(spec_indices[j])
            for attempt in range(20):
                qn = base_q + self.rng.normal(0, cfg.reset_noise, 6)
                qn = np.clip(qn, cfg.hand.q_lo, cfg.hand.q_hi)
                tips = forward_kinematics(cfg.hand, qn[None])[0]
                pos = np.array([0.0, rest_h])
                rep = contact_forces(
                    pos[None], np.zeros(1), np.zeros((1, 2)), np.zeros(1),
                    self.verts[i:i + 1], self.normals[i:i + 1],
                    self.offsets[i:i + 1], self.mu[i:i + 1], tips[None],
                    np.zeros((1, 3, 2)), cfg.kn, cfg.cn, cfg.kt,
                    self.minor_radius[i:i + 1])
                if rep["penetration"].max() <= cfg.reset_penetration_tol:
                    break
            else:
                raise ValueError(
                    "could not place fingers without deep interpenetration")
            self.q[i] = qn
            self.obj_pos[i] = pos
        self.qdot[idx] = 0.0
        self.obj_theta[idx] = 0.0
        self.obj_vel[idx] = 0.0
        self.obj_omega[idx] = 0.0
        self.tick[idx] = 0
        self.goal_theta[idx] = np.asarray(goals, dtype=float)
        self.theta0[idx] = 0.0
        self.com0[idx] = self.obj_pos[idx]
        self.q_ref[idx] = self.q[idx]
        self.q_cmd_prev[idx] = np.nan
        self.perturb_force[idx] = 0.0
        self.perturb_ticks[idx] = 0
        self.pinned_steps[idx] = 0

    # -- stepping ------------------------------------------------------

    def step_inner(self, command):
        """One 300 Hz tick under the given joint set-points (n, 6)."""
        cfg = self.cfg
        dt = cfg.dt
        tau = np.clip(self.kp[:, None] * (command - self.q)
                      - self.kd[:, None] * self.qdot,
                      -cfg.torque_limit, cfg.torque_limit)
        tips, tipvel = forward_kinematics(cfg.hand, self.q, self.qdot)
        jac = jacobians(cfg.hand, self.q)             # (n, 3, 2, 2)
        rep = contact_forces(self.obj_pos, self.obj_theta, self.obj_vel,
                             self.obj_omega, self.verts, self.normals,
                             self.offsets, self.mu, tips, tipvel,
                             cfg.kn, self.cn[:, None], cfg.kt,
                             self.minor_radius,
                             mass=self.mass, inertia=self.inertia, dt=dt,
                             jac=jac, joint_inertia=cfg.joint_inertia)
        # map tip reaction forces to joint torques
        tau_c = np.einsum("nfkj,nfk->nfj", jac, rep["force_on_tips"])
        tau = tau + tau_c.reshape(self.n, 6)
        # object integration (semi-implicit Euler)
        force = rep["force_on_object"] + self.perturb_force \
            * (self.perturb_ticks > 0)[:, None]
        force = force + np.stack(
            [np.zeros(self.n), -cfg.gravity * self.mass], axis=1)
        self.obj_vel = self.obj_vel + dt * force / self.mass[:, None]
        self.obj_omega = self.obj_omega + dt * rep["torque_on_object"] \
            / self.inertia
        self.obj_pos = self.obj_pos + dt * self.obj_vel
        self.obj_theta = self.obj_theta + dt * self.obj_omega
        # finger integration
        qddot = (tau - cfg.joint_damping * self.qdot) / cfg.joint_inertia
        self.qdot = self.qdot + dt * qddot
        q_new = self.q + dt * self.qdot
        clamped = np.clip(q_new, cfg.hand.q_lo, cfg.hand.q_hi)
        self.qdot = np.where(q_new == clamped, self.qdot, 0.0)
        self.q = clamped
        self.perturb_ticks = np.maximum(self.perturb_ticks - 1, 0)
        self.tick += 1
        return rep

    def step_policy(self, action):
        """One 12 Hz policy step: interpolate, run 25 ticks, report."""
        cfg = self.cfg
        action = np.clip(np.asarray(action, dtype=float),
                         -cfg.action_bound, cfg.action_bound)
        # reference selection (vectorized command pipeline)
        fresh = np.isnan(self.q_cmd_prev[:, 0])
        if cfg.scheme == MEASURED_REF:
            q_ref = self.q.copy()
        else:
            q_ref = np.where(fresh[:, None], self.q, self.q_cmd_prev)
        self.q_ref = q_ref
        self.q_cmd_prev = q_ref + action
        setpoints = interpolate_commands(q_ref, action, cfg.n_substeps)
        theta_before = self.obj_theta.copy()
        hold = cfg.inner_per_policy // cfg.n_substeps
        contact_ticks = np.zeros((self.n, 3), dtype=np.int64)
        tunneling = np.zeros(self.n, dtype=bool)
        rep = None
        for k in range(cfg.n_substeps):
            for _ in range(hold):
                rep = self.step_inner(setpoints[k])
                contact_ticks += rep["in_contact"]
                tunneling |= rep["tunneling"].any(axis=1)
        nan_mask = ~(np.isfinite(self.q).all(axis=1)
                     & np.isfinite(self.obj_pos).all(axis=1)
                     & np.isfinite(self.obj_vel).all(axis=1)
                     & np.isfinite(self.obj_omega)
                     & np.isfinite(self.qdot).all(axis=1))
        near_limit = ((self.q <= cfg.hand.q_lo + 1e-3)
                      | (self.q >= cfg.hand.q_hi - 1e-3)).any(axis=1)
        self.pinned_steps = np.where(near_limit, self.pinned_steps + 1, 0)
        return {
            "contact_ticks": contact_ticks,
            "contact_flags": contact_ticks >= max(1, cfg.inner_per_policy // 5),
            "report": rep,
            "dtheta_step": self.obj_theta - theta_before,
            "nan_mask": nan_mask,
            "tunneling": tunneling,
            "action": action,
        }

    # -- task-facing views --------------------------------------------

    def delta_theta(self):
        """Unsigned angular distance to the goal orientation."""
        return np.abs(self.goal_theta - self.obj_theta)

    def tips(self):
        return forward_kinematics(self.cfg.hand, self.q, self.qdot)

    def apply_perturbation(self, idx, force, duration_s=0.2):
        self.perturb_force[idx] = force
        self.perturb_ticks[idx] = int(round(duration_s / self.cfg.dt))
