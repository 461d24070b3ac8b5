"""Forward/inverse kinematics for the three two-link fingers.

Joint convention: q1 is the base-joint angle measured from straight up
(+y), positive toward +x; q2 is the relative elbow angle. Link direction
for angle a is (sin a, cos a), so q = 0 points both links up.
"""

from dataclasses import dataclass, field

import numpy as np


@dataclass
class HandModel:
    bases: np.ndarray = field(
        default_factory=lambda: np.array([[-0.06, 0.0], [0.0, 0.0],
                                          [0.06, 0.0]]))
    l1: float = 0.05
    l2: float = 0.05
    q_lo: np.ndarray = field(
        default_factory=lambda: np.tile([-1.45, -2.7], 3))
    q_hi: np.ndarray = field(
        default_factory=lambda: np.tile([1.45, 2.7], 3))

    @property
    def n_fingers(self):
        return len(self.bases)


def _u(a):
    return np.stack([np.sin(a), np.cos(a)], axis=-1)


def _du(a):
    return np.stack([np.cos(a), -np.sin(a)], axis=-1)


def forward_kinematics(hand, q, q_dot=None):
    """Fingertip positions (and velocities via the Jacobian).

    q: (..., 6). Returns tips (..., 3, 2) and, if q_dot given, tip
    velocities (..., 3, 2).
    """
    q = np.asarray(q, dtype=float)
    qf = q.reshape(*q.shape[:-1], 3, 2)
    a1 = qf[..., 0]
    a12 = qf[..., 0] + qf[..., 1]
    tips = hand.bases + hand.l1 * _u(a1) + hand.l2 * _u(a12)
    if q_dot is None:
        return tips
    qdf = np.asarray(q_dot, dtype=float).reshape(*q.shape[:-1], 3, 2)
    j1 = hand.l1 * _du(a1) + hand.l2 * _du(a12)   # d tip / d q1
    j2 = hand.l2 * _du(a12)                        # d tip / d q2
    vel = j1 * qdf[..., 0:1] + j2 * qdf[..., 1:2]
    return tips, vel


def jacobians(hand, q):
    """Per-finger 2x2 Jacobians, shape (..., 3, 2, 2): [point, joint]."""
    q = np.asarray(q, dtype=float)
    qf = q.reshape(*q.shape[:-1], 3, 2)
    a1 = qf[..., 0]
    a12 = qf[..., 0] + qf[..., 1]
    j1 = hand.l1 * _du(a1) + hand.l2 * _du(a12)
    j2 = hand.l2 * _du(a12)
    return np.stack([j1, j2], axis=-1)


def ik_finger(hand, finger, target, elbow=1.0):
    """Joint angles (q1, q2) placing the fingertip at `target`.

    elbow selects the elbow-out direction (+1 / -1). Raises ValueError
    when the target is out of reach.
    """
    r = np.asarray(target, dtype=float) - hand.bases[finger]
    rho2 = float(r @ r)
    c2 = (rho2 - hand.l1 ** 2 - hand.l2 ** 2) / (2 * hand.l1 * hand.l2)
    if c2 > 1.0 + 1e-9 or c2 < -1.0 - 1e-9:
        raise ValueError("fingertip target out of reach: %s" % (target,))
    c2 = np.clip(c2, -1.0, 1.0)
    q2 = elbow * np.arccos(c2)
    psi = np.arctan2(r[0], r[1])  # angle from +y, toward +x
    q1 = psi - np.arctan2(hand.l2 * np.sin(q2),
                          hand.l1 + hand.l2 * np.cos(q2))
    return np.array([q1, q2])
