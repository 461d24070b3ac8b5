"""Low-rate action to high-rate PD set-point pipeline.

Policy actions (delta joint positions) arrive at 12 Hz and are linearly
interpolated into 60 Hz set-points for the 300 Hz PD loop. The reference
for interpolation can be the measured joint position (jerky under
tracking error) or the previous command (smooth); both schemes are kept
so the difference can be measured.
"""

from dataclasses import dataclass, field

import numpy as np

MEASURED_REF = "measured_ref"
COMMAND_REF = "command_ref"


@dataclass
class CommandPipeline:
    """Reference/command bookkeeping for one hand (or a batch of hands)."""

    scheme: str = COMMAND_REF
    n_substeps: int = 5
    kp: float = 3.0
    kd: float = 0.1
    torque_limit: float = 2.0
    q_ref: np.ndarray | None = field(default=None)
    q_cmd_prev: np.ndarray | None = field(default=None)

    def __post_init__(self):
        if self.scheme not in (MEASURED_REF, COMMAND_REF):
            raise ValueError("unknown reference scheme %r" % self.scheme)
        if self.n_substeps < 1:
            raise ValueError("n_substeps must be >= 1")
        if self.kp <= 0 or self.kd < 0:
            raise ValueError("gains must be positive")

    def step(self, q_measured, action):
        """Advance the reference and return the set-points for this action."""
        action = np.asarray(action, dtype=float)
        self.q_ref = advance_reference(self, q_measured, action)
        self.q_cmd_prev = self.q_ref + action
        return interpolate_commands(self.q_ref, action, self.n_substeps)


def interpolate_commands(q_ref, action, n_substeps):
    """Set-points q_ref + (n/N) * action for n = 1..N."""
    if n_substeps < 1:
        raise ValueError("n_substeps must be >= 1")
    q_ref = np.asarray(q_ref, dtype=float)
    action = np.asarray(action, dtype=float)
    fracs = np.arange(1, n_substeps + 1) / n_substeps
    return q_ref[None] + fracs.reshape(-1, *([1] * q_ref.ndim)) * action[None]


def advance_reference(pipeline, q_measured, action):
    """New interpolation reference for the incoming action.

    MEASURED_REF takes the current measured joint position (the baseline
    scheme); COMMAND_REF takes the previously commanded position, which
    keeps consecutive set-points continuous under tracking error.
    """
    del action  # reference choice does not look at the incoming action
    if pipeline.q_cmd_prev is None:
        return np.array(q_measured, dtype=float)
    if pipeline.scheme == MEASURED_REF:
        return np.array(q_measured, dtype=float)
    return pipeline.q_cmd_prev.copy()


def pd_torque(set_point, q, q_dot, kp, kd, torque_limit):
    """tau = kp * (set_point - q) - kd * q_dot, clamped to the limit."""
    tau = kp * (np.asarray(set_point, float) - np.asarray(q, float)) \
        - kd * np.asarray(q_dot, float)
    return np.clip(tau, -torque_limit, torque_limit)


def setpoint_jump_metric(stream):
    """Max absolute consecutive set-point difference, per joint."""
    stream = np.asarray(stream, dtype=float)
    if stream.shape[0] < 2:
        raise ValueError("set-point stream needs at least 2 entries")
    return np.abs(np.diff(stream, axis=0)).max(axis=0)
