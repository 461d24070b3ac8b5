"""Goal-conditioned teacher training with clipped policy-gradient RL.

The teacher sees the full simulator state plus the goal and is trained
with a clipped surrogate objective over parallel environments, with
generalized advantage estimation and separate policy/value networks.
"""

import csv
import logging
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .nn import (OptimizerState, ParamSet, Tensor, adam_step, backprop,
                 forward_mlp, init_mlp)
from .sim import EnvConfig
from .task import GOAL_HI, SUCCESS, ReorientTask, TEACHER_OBS_WIDTH

log = logging.getLogger(__name__)

LOG2PI = float(np.log(2.0 * np.pi))


@dataclass
class TrainConfig:
    n_envs: int = 64
    rollout_horizon: int = 48
    gamma: float = 0.99
    lam: float = 0.95
    clip: float = 0.2
    epochs: int = 4
    minibatch: int = 2048
    lr: float = 3e-4
    entropy_coef: float = 0.003
    value_coef: float = 0.5
    target_kl: float = None   # stop the epoch loop when approx KL exceeds it
    total_steps: int = 2_000_000
    seed: int = 0
    hidden: tuple = (256, 256, 256)
    log_std_init: float = -2.5
    log_std_bounds: tuple = (-5.0, -1.0)
    eval_every: int = 100_000
    eval_episodes: int = 64
    goal_sign: str = "positive"
    randomize: bool = False
    perturb: bool = False
    c3: float = -0.6          # keyframe reward weight (0 disables)
    normalize_returns: bool = True
    # fraction of training over which the sampled-goal ceiling ramps
    # from goal_ramp_start up to the full range; None disables it.
    # Evaluation always draws goals from the full range.
    goal_ramp: float = None
    goal_ramp_start: float = 2.0
    # linear anneal targets over training; None keeps them constant
    entropy_coef_final: float = None
    lr_final: float = None

    def __post_init__(self):
        if not (0.0 < self.gamma <= 1.0 and 0.0 < self.lam <= 1.0):
            raise ValueError("gamma and lam must be in (0, 1]")
        if not (0.0 < self.clip < 1.0):
            raise ValueError("clip must be in (0, 1)")
        for name in ("n_envs", "rollout_horizon", "epochs", "minibatch",
                     "total_steps", "eval_episodes"):
            if getattr(self, name) < 1:
                raise ValueError("%s must be >= 1" % name)


@dataclass
class RolloutBatch:
    obs: np.ndarray        # (n_envs, T, obs width)
    actions: np.ndarray    # (n_envs, T, 6)
    logp: np.ndarray       # (n_envs, T)
    rewards: np.ndarray    # (n_envs, T)
    values: np.ndarray     # (n_envs, T)
    dones: np.ndarray      # (n_envs, T) bool
    reasons: list          # (env, reason) pairs for episodes that ended
    last_values: np.ndarray  # (n_envs,) bootstrap for the step after T

    def __post_init__(self):
        T = self.obs.shape[1]
        for arr in (self.actions, self.logp, self.rewards, self.values,
                    self.dones):
            if arr.shape[:2] != (self.obs.shape[0], T):
                raise ValueError("rollout fields must be rectangular")


class ReturnNormalizer:
    """Scales rewards by the running std of discounted returns.

    Keeps the critic target near unit variance so the value loss does
    not dwarf the surrogate when episode returns span a few hundred.
    """

    def __init__(self, n_envs, gamma, eps=1e-8):
        self.gamma = gamma
        self.eps = eps
        self.ret = np.zeros(n_envs)
        self.count = 1e-4
        self.mean = 0.0
        self.m2 = 0.0

    def _push(self, xs):
        n = xs.size
        m, v = xs.mean(), xs.var()
        delta = m - self.mean
        tot = self.count + n
        self.mean += delta * n / tot
        self.m2 += v * n + delta * delta * self.count * n / tot
        self.count = tot

    def scale(self, rewards, dones):
        """Update stats over one (n_envs, T) batch and return scaled rewards."""
        for t in range(rewards.shape[1]):
            self.ret = self.ret * self.gamma + rewards[:, t]
            self._push(self.ret)
            self.ret[dones[:, t]] = 0.0
        std = np.sqrt(self.m2 / self.count + self.eps)
        return rewards / max(std, self.eps)


def init_teacher(rng, hidden=(256, 256, 256), log_std_init=-2.5,
                 obs_width=TEACHER_OBS_WIDTH, act_width=6):
    params = init_mlp([obs_width, *hidden, act_width], rng, prefix="pi")
    vf = init_mlp([obs_width, *hidden, 1], rng, prefix="vf")
    for name in vf.names():
        params.add(name, vf[name])
    params.add("pi.log_std",
               np.full(act_width, log_std_init, dtype=np.float32))
    return params


def policy_mean(params, obs):
    return forward_mlp(params, np.asarray(obs, np.float32), prefix="pi")


def value_estimate(params, obs):
    out = forward_mlp(params, np.asarray(obs, np.float32), prefix="vf")
    return out.data[..., 0]


def gaussian_logp(actions, mean, log_std):
    """Diagonal-Gaussian log density; works on arrays (inference path)."""
    std = np.exp(log_std)
    z = (actions - mean) / std
    return -0.5 * (z * z).sum(axis=-1) - log_std.sum() \
        - 0.5 * actions.shape[-1] * LOG2PI


def act_teacher(params, obs, rng=None):
    """Sample an action (or return the mean when rng is None)."""
    mean = policy_mean(params, obs).data
    if rng is None:
        return mean, None
    log_std = params["pi.log_std"].astype(np.float64)
    a = mean + rng.normal(size=mean.shape) * np.exp(log_std)
    return a, gaussian_logp(a, mean, log_std)


def collect_rollouts(params, task, horizon, rng):
    """Run every environment `horizon` steps, sampling from the policy."""
    n = task.n
    obs = np.zeros((n, horizon, TEACHER_OBS_WIDTH))
    actions = np.zeros((n, horizon, 6))
    logp = np.zeros((n, horizon))
    rewards = np.zeros((n, horizon))
    values = np.zeros((n, horizon))
    dones = np.zeros((n, horizon), dtype=bool)
    log_start = len(task.episode_log)
    cur = task.observe()
    for t in range(horizon):
        obs[:, t] = cur
        a, lp = act_teacher(params, cur, rng)
        out = task.step(a)
        actions[:, t] = a
        logp[:, t] = lp
        rewards[:, t] = out["reward"]
        values[:, t] = value_estimate(params, obs[:, t])
        dones[:, t] = out["done"]
        cur = out["obs"]
    last_values = value_estimate(params, cur)
    return RolloutBatch(obs=obs, actions=actions, logp=logp,
                        rewards=rewards, values=values, dones=dones,
                        reasons=task.episode_log[log_start:],
                        last_values=last_values)


def gae(rewards, values, dones, gamma, lam, last_values):
    """Generalized advantage estimation over (n_envs, T) arrays.

    Returns raw advantages and returns; normalization happens at the
    batch level in the update.
    """
    n, T = rewards.shape
    adv = np.zeros((n, T))
    next_v = last_values
    next_a = np.zeros(n)
    for t in range(T - 1, -1, -1):
        live = 1.0 - dones[:, t]
        delta = rewards[:, t] + gamma * next_v * live - values[:, t]
        next_a = delta + gamma * lam * live * next_a
        adv[:, t] = next_a
        next_v = values[:, t]
    return adv, adv + values


def _tmin(a, b):
    # elementwise minimum via relu; keeps gradients on the active branch
    return a - (a - b).relu()


def _tclip(t, lo, hi):
    return lo + (t - lo).relu() - (t - hi).relu()


def ppo_surrogate(params_t, obs, actions, old_logp, adv, returns, cfg):
    """Clipped objective + value loss + entropy bonus as one Tensor loss.

    Returns (loss, diagnostics dict with numpy values).
    """
    mean = forward_mlp(params_t, obs.astype(np.float32), prefix="pi")
    log_std = params_t["pi.log_std"]
    std_inv = (log_std * -1.0).exp()
    z = (Tensor(actions.astype(np.float32)) - mean) * std_inv
    new_logp = (z * z).sum(axis=-1) * -0.5 - log_std.sum() \
        - 0.5 * actions.shape[-1] * LOG2PI
    ratio = (new_logp - old_logp.astype(np.float32)).exp()
    adv_t = Tensor(adv.astype(np.float32))
    surr = _tmin(ratio * adv_t,
                 _tclip(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * adv_t)
    surrogate = surr.mean()
    v = forward_mlp(params_t, obs.astype(np.float32), prefix="vf")
    verr = v.reshape(v.shape[:-1]) - returns.astype(np.float32)
    value_loss = (verr * verr).mean()
    entropy = log_std.sum() + 0.5 * len(params_t["pi.log_std"].data) \
        * (1.0 + LOG2PI)
    loss = surrogate * -1.0 + value_loss * cfg.value_coef \
        + entropy * -cfg.entropy_coef
    diag = {
        "surrogate": float(surrogate.data),
        "value_loss": float(value_loss.data),
        "entropy": float(entropy.data),
        "clip_fraction": float(np.mean(
            np.abs(ratio.data - 1.0) > cfg.clip)),
        "approx_kl": float(np.mean(old_logp - new_logp.data)),
    }
    return loss, diag


def ppo_update(params, opt, batch, cfg, rng):
    """Epochs of minibatch updates on one rollout batch."""
    adv, returns = gae(batch.rewards, batch.values, batch.dones,
                       cfg.gamma, cfg.lam, batch.last_values)
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    n_rows = batch.obs.shape[0] * batch.obs.shape[1]
    flat = lambda a: a.reshape(n_rows, *a.shape[2:])
    obs, actions = flat(batch.obs), flat(batch.actions)
    old_logp, adv_f, ret_f = flat(batch.logp), flat(adv), flat(returns)
    diags = []
    halted = False
    for _ in range(cfg.epochs):
        if halted:
            break
        order = rng.permutation(n_rows)
        for lo in range(0, n_rows, cfg.minibatch):
            rows = order[lo:lo + cfg.minibatch]
            params_t = params.as_tensors()
            loss, diag = ppo_surrogate(
                params_t, obs[rows], actions[rows], old_logp[rows],
                adv_f[rows], ret_f[rows], cfg)
            if not np.isfinite(loss.data):
                log.warning("non-finite loss %r; skipping update", loss.data)
                continue
            if cfg.target_kl is not None and diag["approx_kl"] > cfg.target_kl:
                halted = True
                break
            grads = backprop(loss, params_t)
            adam_step(params, grads, opt)
            np.clip(params["pi.log_std"], *cfg.log_std_bounds,
                    out=params["pi.log_std"])
            diags.append(diag)
    keys = diags[0].keys() if diags else []
    return {k: float(np.mean([d[k] for d in diags])) for k in keys}


def evaluate_teacher(params, env_cfg, cfg, seed=123):
    """Success rate, mean reward, and mean final distance over episodes."""
    n = cfg.eval_episodes
    task = ReorientTask(env_cfg, n, seed=seed, goal_sign=cfg.goal_sign)
    ep_reward = np.zeros(n)
    final_dtheta = np.full(n, np.nan)
    outcome = np.full(n, None, dtype=object)
    obs = task.observe()
    for _ in range(env_cfg.horizon):
        a, _ = act_teacher(params, obs)
        out = task.step(a)
        live = np.array([r is None for r in outcome])
        ep_reward += out["reward"] * live
        ended = live & out["done"]
        final_dtheta[ended] = out["dtheta"][ended]
        for i in np.flatnonzero(ended):
            outcome[i] = out["reasons"][i]
        if all(r is not None for r in outcome):
            break
        obs = out["obs"]
    success = np.mean([r == SUCCESS for r in outcome])
    return {
        "success_rate": float(success),
        "mean_episode_reward": float(ep_reward.mean()),
        "mean_dtheta_at_end": float(np.nanmean(final_dtheta)),
    }


def train_teacher(cfg, env_cfg=None, out_dir="runs/teacher"):
    """Full training loop; writes a curve CSV and the best checkpoint.

    Returns (checkpoint path, curve path, last evaluation dict).
    """
    from .task import DomainRanges, RewardCoeffs

    env_cfg = (env_cfg or EnvConfig()).finalize()
    os.makedirs(out_dir, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    params = init_teacher(rng, hidden=cfg.hidden,
                          log_std_init=cfg.log_std_init)
    opt = OptimizerState(params, lr=cfg.lr)
    ranges = DomainRanges() if cfg.randomize else None
    task = ReorientTask(env_cfg, cfg.n_envs, seed=cfg.seed,
                        coeffs=RewardCoeffs(c3=cfg.c3),
                        goal_sign=cfg.goal_sign, ranges=ranges,
                        perturb=cfg.perturb)
    curve_path = os.path.join(out_dir, "curve.csv")
    ckpt_path = os.path.join(out_dir, "teacher.ckpt")
    norm = (ReturnNormalizer(cfg.n_envs, cfg.gamma)
            if cfg.normalize_returns else None)
    best = -1.0
    steps_done = 0
    next_eval = 0
    last_eval = None
    with open(curve_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["env_steps", "success_rate",
                         "mean_episode_reward", "mean_dtheta_at_end"])
        while steps_done < cfg.total_steps:
            if cfg.goal_ramp is not None:
                ramp = steps_done / (cfg.goal_ramp * cfg.total_steps)
                task.goal_hi = min(GOAL_HI, cfg.goal_ramp_start
                                   + (GOAL_HI - cfg.goal_ramp_start)
                                   * ramp)
            batch = collect_rollouts(params, task, cfg.rollout_horizon, rng)
            if norm is not None:
                batch.rewards = norm.scale(batch.rewards, batch.dones)
            steps_done += cfg.n_envs * cfg.rollout_horizon
            frac = min(steps_done / cfg.total_steps, 1.0)
            live = cfg
            if cfg.entropy_coef_final is not None:
                live = replace(live, entropy_coef=cfg.entropy_coef
                               + frac * (cfg.entropy_coef_final
                                         - cfg.entropy_coef))
            if cfg.lr_final is not None:
                opt.lr = cfg.lr + frac * (cfg.lr_final - cfg.lr)
            diag = ppo_update(params, opt, batch, live, rng)
            if steps_done >= next_eval:
                next_eval += cfg.eval_every
                last_eval = evaluate_teacher(params, env_cfg, cfg)
                writer.writerow([steps_done,
                                 "%.4f" % last_eval["success_rate"],
                                 "%.3f" % last_eval["mean_episode_reward"],
                                 "%.4f" % last_eval["mean_dtheta_at_end"]])
                fh.flush()
                log.info("steps %d success %.2f reward %.1f diag %s",
                         steps_done, last_eval["success_rate"],
                         last_eval["mean_episode_reward"], diag)
                if last_eval["success_rate"] >= best:
                    best = last_eval["success_rate"]
                    params.save(ckpt_path)
                entropy_floor = cfg.log_std_bounds[0] * 6 + 4.0
                if (last_eval["success_rate"] == 0.0
                        and diag.get("entropy", 0.0) < entropy_floor
                        and steps_done > cfg.total_steps // 2):
                    log.error("divergence: zero success with collapsed "
                              "entropy; stopping early")
                    break
    if not os.path.exists(ckpt_path):
        params.save(ckpt_path)
    return ckpt_path, curve_path, last_eval
