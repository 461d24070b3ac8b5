"""Stop-signal student distillation from the goal-conditioned teacher.

The student sees only proprioception (joint positions and velocities),
its previous action, and a binary stop signal. It is trained with
dataset-aggregation imitation: roll out a teacher/student mixture,
relabel every visited state with the frozen teacher's mean action, and
regress over the grown dataset. Sequence backbone is a causal attention
stack by default with a recurrent baseline.
"""

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .nn import (OptimizerState, ParamSet, Tensor, adam_step, backprop,
                 RecurrentConfig, TransformerConfig,
                 forward_causal_attention, forward_recurrent,
                 init_recurrent, init_transformer)
from .sim import EnvConfig
from .task import ReorientTask, stop_label
from .teacher import act_teacher

log = logging.getLogger(__name__)

STUDENT_OBS_WIDTH = 19
STUDENT_OBS_LAYOUT = "q[0:6] qdot[6:12] prev_action[12:18] stop[18]"
STUDENT_OBS_VERSION = 1
DATASET_FORMAT_VERSION = 1


@dataclass
class DaggerConfig:
    iterations: int = 6
    episodes: int = 32            # parallel episodes per iteration
    rollout_steps: int = 240
    hold_steps: int = 36          # 3 s continuation after the stop flips
    window: int = 32
    arch: str = "transformer"     # or "recurrent"
    hidden: int = 64
    n_layers: int = 2
    epochs: int = 4
    minibatch: int = 64           # windows per gradient step
    steps_per_epoch: int = 60     # minibatches per epoch
    lr: float = 1e-3
    seed: int = 0
    mask_qdot: bool = False       # ablation: hide joint velocities
    eval_episodes: int = 16
    goal_sign: str = "positive"

    def beta(self, i):
        """Teacher mixing probability at iteration i (1, 0.5, 0.25, ...)."""
        return 0.5 ** i


def student_observe(env, prev_action, i_stop, mask_qdot=False):
    """Proprioceptive observation, width 19."""
    qdot = np.zeros_like(env.qdot) if mask_qdot else env.qdot
    obs = np.concatenate([
        env.q, qdot, prev_action,
        np.asarray(i_stop, dtype=float).reshape(env.n, 1),
    ], axis=1)
    assert obs.shape[1] == STUDENT_OBS_WIDTH
    return obs


def init_student(cfg, rng):
    if cfg.arch == "transformer":
        arch = TransformerConfig(in_width=STUDENT_OBS_WIDTH, out_width=6,
                                 n_layers=cfg.n_layers, hidden=cfg.hidden,
                                 intermediate=2 * cfg.hidden,
                                 window=cfg.window)
        return init_transformer(arch, rng, prefix="tf"), arch
    if cfg.arch == "recurrent":
        arch = RecurrentConfig(in_width=STUDENT_OBS_WIDTH, out_width=6,
                               hidden=cfg.hidden, window=cfg.window)
        return init_recurrent(arch, rng, prefix="rnn"), arch
    raise ValueError("unknown architecture %r" % cfg.arch)


def _forward(params, windows, arch):
    if isinstance(arch, TransformerConfig):
        return forward_causal_attention(params, windows, arch, prefix="tf")
    return forward_recurrent(params, windows, arch, prefix="rnn")


def act_student(params, windows, arch, action_bound=0.1):
    """Deterministic bounded action from an observation history window.

    windows: (T, 19) or (B, T, 19); returns the action for the latest
    step, squashed inside the bound.
    """
    windows = np.asarray(windows, np.float32)
    if windows.shape[-2] == 0:
        raise ValueError("history window must be non-empty")
    out = _forward(params, windows, arch)
    return action_bound * np.tanh(out.data[..., -1, :])


def label_with_teacher(teacher_params, teacher_obs, action_bound=0.1):
    """Teacher mean actions (no sampling noise) at the visited states.

    Clipped to the action bound, matching what the simulator executes.
    """
    a, _ = act_teacher(teacher_params, teacher_obs)
    return np.clip(a, -action_bound, action_bound)


# -- dataset -----------------------------------------------------------


class Dataset:
    """Append-only store of (student observation, teacher label) episodes."""

    def __init__(self):
        self.episodes = []   # dicts with "obs" (T, 19) and "labels" (T, 6)

    def append(self, obs, labels):
        obs = np.asarray(obs, np.float32)
        labels = np.asarray(labels, np.float32)
        if len(obs) != len(labels) or len(obs) == 0:
            raise ValueError("episode obs and labels must align")
        self.episodes.append({"obs": obs, "labels": labels})

    @property
    def n_steps(self):
        return sum(len(e["obs"]) for e in self.episodes)

    def save(self, path):
        """Raw float32 blob plus a JSON manifest describing the layout."""
        lengths = [len(e["obs"]) for e in self.episodes]
        blob = b"".join(
            e["obs"].tobytes() + e["labels"].tobytes()
            for e in self.episodes)
        with open(path + ".bin", "wb") as fh:
            fh.write(blob)
        manifest = {
            "format_version": DATASET_FORMAT_VERSION,
            "obs_width": STUDENT_OBS_WIDTH,
            "obs_layout": STUDENT_OBS_LAYOUT,
            "label_width": 6,
            "dtype": "<f4",
            "episode_lengths": lengths,
        }
        with open(path, "w") as fh:
            json.dump(manifest, fh, indent=1)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            manifest = json.load(fh)
        if manifest["format_version"] != DATASET_FORMAT_VERSION:
            raise ValueError("unsupported dataset format version")
        raw = np.fromfile(path + ".bin", dtype=manifest["dtype"])
        ds = cls()
        ow, lw = manifest["obs_width"], manifest["label_width"]
        at = 0
        for T in manifest["episode_lengths"]:
            obs = raw[at:at + T * ow].reshape(T, ow)
            at += T * ow
            labels = raw[at:at + T * lw].reshape(T, lw)
            at += T * lw
            ds.append(obs, labels)
        return ds

    def sample_windows(self, n, window, rng):
        """(n, window, 19) obs, (n, window, 6) labels, (n, window) mask.

        Episodes shorter than the window are left-padded with zeros and
        masked out of the loss.
        """
        obs = np.zeros((n, window, STUDENT_OBS_WIDTH), np.float32)
        labels = np.zeros((n, window, 6), np.float32)
        mask = np.zeros((n, window), np.float32)
        picks = rng.integers(0, len(self.episodes), size=n)
        for row, k in enumerate(picks):
            ep = self.episodes[k]
            T = len(ep["obs"])
            L = min(T, window)
            start = rng.integers(0, T - L + 1)
            obs[row, -L:] = ep["obs"][start:start + L]
            labels[row, -L:] = ep["labels"][start:start + L]
            mask[row, -L:] = 1.0
        return obs, labels, mask


# -- rollouts ----------------------------------------------------------


def dagger_rollout(student_params, arch, teacher_params, task, beta, cfg,
                   rng):
    """Mixture rollout; returns finished episodes of (obs, label) pairs.

    Every visited state is relabeled with the teacher's mean action.
    After the stop signal flips, episodes run cfg.hold_steps further so
    the dataset contains held states, then end.
    """
    n = task.n
    bound = task.env.cfg.action_bound
    buf_obs = [[] for _ in range(n)]
    buf_lab = [[] for _ in range(n)]
    episodes = []
    post_stop = np.zeros(n, dtype=np.int64)
    windows = np.zeros((n, 0, STUDENT_OBS_WIDTH), np.float32)

    def harvest(i):
        if buf_obs[i]:
            episodes.append((np.array(buf_obs[i]), np.array(buf_lab[i])))
        buf_obs[i], buf_lab[i] = [], []
        post_stop[i] = 0

    for _ in range(cfg.rollout_steps):
        i_stop = stop_label(task.env.delta_theta(),
                            task.tracker.theta_bar)
        s_obs = student_observe(task.env, task.prev_action, i_stop,
                                mask_qdot=cfg.mask_qdot)
        labels = label_with_teacher(teacher_params, task.observe(),
                                    action_bound=bound)
        # halt-and-hold label: past the stop flip the target is a frozen
        # set-point (the PD controllers then hold the grasp), not the
        # goal-chasing teacher, which keeps churning at held states
        labels = np.where(i_stop[:, None] == 1, 0.0, labels)
        windows = np.concatenate([windows, s_obs[:, None]], axis=1)
        windows = windows[:, -cfg.window:]
        use_teacher = rng.random(n) < beta
        actions = np.where(use_teacher[:, None], labels,
                           act_student(student_params, windows, arch,
                                       action_bound=bound))
        for i in range(n):
            buf_obs[i].append(s_obs[i])
            buf_lab[i].append(labels[i])
        out = task.step(actions)
        post_stop = np.where(i_stop == 1, post_stop + 1, post_stop)
        held_out = post_stop >= cfg.hold_steps
        for i in np.flatnonzero(out["done"] | held_out):
            harvest(i)
            windows[i] = 0.0
        if held_out.any():
            task.reset(np.flatnonzero(held_out))
            for i in np.flatnonzero(held_out):
                windows[i] = 0.0
    for i in range(n):
        harvest(i)
    return episodes


def train_epochs(params, arch, dataset, cfg, opt, rng):
    """Minibatch regression over the aggregated dataset; returns losses."""
    losses = []
    for _ in range(cfg.epochs):
        for _ in range(cfg.steps_per_epoch):
            obs, labels, mask = dataset.sample_windows(
                cfg.minibatch, cfg.window, rng)
            leaves = params.as_tensors()
            out = _forward(leaves, obs, arch)
            pred = out.tanh() * 0.1
            err = pred - labels
            m = Tensor(mask[..., None])
            loss = (err * err * m).sum() / (mask.sum() * 6.0)
            grads = backprop(loss, leaves)
            adam_step(params, grads, opt)
            losses.append(float(loss.data))
    return losses


def dagger_iteration(student_params, arch, teacher_params, task, beta,
                     dataset, cfg, opt, rng):
    """One dataset-aggregation round: roll out, relabel, grow, regress."""
    before = dataset.n_steps
    for obs, labels in dagger_rollout(student_params, arch, teacher_params,
                                      task, beta, cfg, rng):
        dataset.append(obs, labels)
    assert dataset.n_steps > before
    losses = train_epochs(student_params, arch, dataset, cfg, opt, rng)
    return float(np.mean(losses)), dataset


# -- evaluation --------------------------------------------------------

STOP_QDOT_LIMIT = 0.05   # rad/s, mean over joints
STOP_WITHIN = 12         # policy steps


def evaluate_student(student_params, arch, env_cfg, cfg, seed=321):
    """Success rate, stop latency, and post-stop stillness of a student.

    The stop signal is derived from the true remaining rotation, as
    during distillation. An episode succeeds when the success criteria
    (orientation within the band, all fingertips in contact) hold for
    the required consecutive steps.
    """
    n = cfg.eval_episodes
    task = ReorientTask(env_cfg, n, seed=seed, goal_sign=cfg.goal_sign,
                        success_terminates=True)
    bound = env_cfg.action_bound
    windows = np.zeros((n, 0, STUDENT_OBS_WIDTH), np.float32)
    outcome = np.full(n, None, dtype=object)
    stop_step = np.full(n, -1, dtype=np.int64)
    stopped_quietly = np.zeros(n, dtype=bool)
    latency = np.full(n, np.nan)
    for t in range(env_cfg.horizon):
        i_stop = stop_label(task.env.delta_theta(), task.tracker.theta_bar)
        live = np.array([r is None for r in outcome])
        newly = live & (i_stop == 1) & (stop_step < 0)
        stop_step[newly] = t
        s_obs = student_observe(task.env, task.prev_action, i_stop,
                                mask_qdot=cfg.mask_qdot)
        windows = np.concatenate([windows, s_obs[:, None]], axis=1)
        windows = windows[:, -cfg.window:]
        a = act_student(student_params, windows, arch, action_bound=bound)
        out = task.step(a)
        quiet = np.abs(task.env.qdot).mean(axis=1) < STOP_QDOT_LIMIT
        track = live & (stop_step >= 0) & ~stopped_quietly & quiet
        latency[track] = t - stop_step[track]
        stopped_quietly |= track
        for i in np.flatnonzero(live & out["done"]):
            outcome[i] = out["reasons"][i]
            windows[i] = 0.0
            if stop_step[i] >= 0 and not stopped_quietly[i]:
                stop_step[i] = -1     # episode ended before settling
        if all(r is not None for r in outcome):
            break
    success = float(np.mean([r == "SUCCESS" for r in outcome]))
    reached = stopped_quietly & (latency <= STOP_WITHIN)
    saw_stop = stop_step >= 0
    return {
        "success_rate": success,
        "stop_latency_mean": float(np.nanmean(latency))
        if stopped_quietly.any() else float("nan"),
        "stop_within_rate": float(reached.sum() / max(saw_stop.sum(), 1)),
    }


def action_mse_vs_teacher(student_params, arch, teacher_params, env_cfg,
                          cfg, seed=99, steps=60):
    """Mean squared action gap along a teacher-driven trajectory."""
    task = ReorientTask(env_cfg, 4, seed=seed, goal_sign=cfg.goal_sign)
    windows = np.zeros((4, 0, STUDENT_OBS_WIDTH), np.float32)
    errs = []
    for _ in range(steps):
        i_stop = stop_label(task.env.delta_theta(), task.tracker.theta_bar)
        s_obs = student_observe(task.env, task.prev_action, i_stop,
                                mask_qdot=cfg.mask_qdot)
        windows = np.concatenate([windows, s_obs[:, None]], axis=1)
        windows = windows[:, -cfg.window:]
        label = label_with_teacher(teacher_params, task.observe(),
                                   action_bound=env_cfg.action_bound)
        pred = act_student(student_params, windows, arch,
                           action_bound=env_cfg.action_bound)
        errs.append(np.mean((pred - label) ** 2))
        out = task.step(label)
        windows[out["done"]] = 0.0
    return float(np.mean(errs))


def distill(cfg, teacher_ckpt, env_cfg=None, out_dir="runs/student"):
    """Full distillation loop; writes a curve CSV and the best checkpoint."""
    env_cfg = (env_cfg or EnvConfig()).finalize()
    os.makedirs(out_dir, exist_ok=True)
    teacher_params = ParamSet.load(teacher_ckpt)
    rng = np.random.default_rng(cfg.seed)
    params, arch = init_student(cfg, rng)
    opt = OptimizerState(params, lr=cfg.lr)
    dataset = Dataset()
    task = ReorientTask(env_cfg, cfg.episodes, seed=cfg.seed,
                        goal_sign=cfg.goal_sign, success_terminates=False)
    curve_path = os.path.join(out_dir, "curve.csv")
    ckpt_path = os.path.join(out_dir, "student.ckpt")
    best = -1.0
    last = None
    with open(curve_path, "w") as fh:
        fh.write("iteration,dataset_steps,train_mse,success_rate,"
                 "action_mse,stop_within_rate\n")
        for i in range(cfg.iterations):
            train_mse, dataset = dagger_iteration(
                params, arch, teacher_params, task, cfg.beta(i), dataset,
                cfg, opt, rng)
            last = evaluate_student(params, arch, env_cfg, cfg)
            mse = action_mse_vs_teacher(params, arch, teacher_params,
                                        env_cfg, cfg)
            fh.write("%d,%d,%.6f,%.4f,%.6f,%.4f\n" % (
                i, dataset.n_steps, train_mse, last["success_rate"], mse,
                last["stop_within_rate"]))
            fh.flush()
            log.info("dagger iteration %d: dataset %d, mse %.5f, "
                     "success %.2f", i, dataset.n_steps, train_mse,
                     last["success_rate"])
            if last["success_rate"] >= best:
                best = last["success_rate"]
                params.save(ckpt_path)
    dataset.save(os.path.join(out_dir, "dataset.json"))
    if not os.path.exists(ckpt_path):
        params.save(ckpt_path)
    return ckpt_path, curve_path, last
