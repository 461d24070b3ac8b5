"""Teacher training tests: rollouts, advantage estimation, the update."""

import numpy as np
from scipy import stats

from reorient.nn import OptimizerState, backprop
from reorient.sim import EnvConfig
from reorient.task import ReorientTask
from reorient.teacher import (
    RolloutBatch, TrainConfig, act_teacher, collect_rollouts,
    evaluate_teacher, gae, gaussian_logp, init_teacher, ppo_surrogate,
    ppo_update, train_teacher, value_estimate,
)

VALID_REASONS = {"SUCCESS", "DISPLACED", "DROPPED", "TIMEOUT", "JOINT_FAULT"}


def _small_setup(seed=0, n_envs=2):
    rng = np.random.default_rng(seed)
    params = init_teacher(rng, hidden=(16, 16))
    task = ReorientTask(EnvConfig(), n_envs, seed=seed)
    return params, task, rng


# -- policy distribution ----------------------------------------------


def test_gaussian_logp_matches_scipy():
    rng = np.random.default_rng(0)
    mean = rng.normal(size=6)
    log_std = rng.uniform(-2, 0, 6)
    a = rng.normal(size=6)
    expect = stats.multivariate_normal(
        mean=mean, cov=np.diag(np.exp(2 * log_std))).logpdf(a)
    assert abs(gaussian_logp(a, mean, log_std) - expect) < 1e-10


def test_act_teacher_mean_is_deterministic():
    params, task, _ = _small_setup()
    obs = task.observe()
    a1, _ = act_teacher(params, obs)
    a2, _ = act_teacher(params, obs)
    assert np.array_equal(a1, a2)


# -- rollout collection ------------------------------------------------


def test_collect_rollouts_deterministic():
    batches = []
    for _ in range(2):
        params, task, rng = _small_setup(seed=3)
        batches.append(collect_rollouts(params, task, 8, rng))
    a, b = batches
    assert np.array_equal(a.obs, b.obs)
    assert np.array_equal(a.actions, b.actions)
    assert np.array_equal(a.rewards, b.rewards)
    assert np.array_equal(a.dones, b.dones)


def test_collect_rollouts_shapes_and_reasons():
    params, task, rng = _small_setup(seed=1, n_envs=3)
    batch = collect_rollouts(params, task, 10, rng)
    assert batch.obs.shape == (3, 10, 43)
    assert batch.actions.shape == (3, 10, 6)
    assert batch.dones.shape == (3, 10)
    # every done step produced exactly one logged episode end
    assert len(batch.reasons) == int(batch.dones.sum())
    for _, reason in batch.reasons:
        assert reason in VALID_REASONS


# -- generalized advantage estimation ---------------------------------


def test_gae_single_terminal_step():
    adv, ret = gae(np.array([[1.0]]), np.array([[0.0]]),
                   np.array([[True]]), 0.99, 0.95, np.array([5.0]))
    assert abs(adv[0, 0] - 1.0) < 1e-12
    assert abs(ret[0, 0] - 1.0) < 1e-12


def test_gae_undiscounted_return_to_go():
    rewards = np.array([[1.0, 2.0, 3.0, 4.0]])
    values = np.zeros((1, 4))
    dones = np.array([[False, False, False, True]])
    adv, _ = gae(rewards, values, dones, 1.0, 1.0, np.zeros(1))
    assert np.allclose(adv[0], [10.0, 9.0, 7.0, 4.0])


def _gae_oracle(rewards, values, dones, gamma, lam, last_values):
    T = len(rewards)
    vnext = np.append(values[1:], last_values)
    delta = rewards + gamma * vnext * (1.0 - dones) - values
    adv = np.zeros(T)
    for t in range(T):
        acc, scale = 0.0, 1.0
        for k in range(t, T):
            acc += scale * delta[k]
            if dones[k]:
                break
            scale *= gamma * lam
        adv[t] = acc
    return adv


def test_gae_matches_bruteforce_oracle():
    rng = np.random.default_rng(2)
    for _ in range(200):
        T = rng.integers(1, 9)
        rewards = rng.normal(size=(1, T))
        values = rng.normal(size=(1, T))
        dones = rng.random((1, T)) < 0.3
        last = rng.normal(size=1)
        adv, ret = gae(rewards, values, dones, 0.99, 0.95, last)
        expect = _gae_oracle(rewards[0], values[0], dones[0], 0.99, 0.95,
                             last[0])
        assert np.allclose(adv[0], expect, atol=1e-6)
        assert np.allclose(ret, adv + values, atol=1e-12)


# -- clipped surrogate -------------------------------------------------


def _surrogate_inputs(params, n=8, seed=4):
    rng = np.random.default_rng(seed)
    obs = rng.normal(size=(n, 43))
    from reorient.teacher import policy_mean
    mu = policy_mean(params, obs).data
    log_std = params["pi.log_std"].astype(np.float64)
    actions = mu + rng.normal(size=mu.shape) * np.exp(log_std)
    old_logp = gaussian_logp(actions, mu, log_std)
    return obs, actions, old_logp, rng


def test_surrogate_ratio_one_equals_mean_advantage():
    params, _, _ = _small_setup()
    obs, actions, old_logp, rng = _surrogate_inputs(params)
    adv = rng.normal(size=len(obs))
    returns = np.zeros(len(obs))
    cfg = TrainConfig(value_coef=0.0, entropy_coef=0.0)
    _, diag = ppo_surrogate(params.as_tensors(), obs, actions, old_logp,
                            adv, returns, cfg)
    assert abs(diag["surrogate"] - adv.mean()) < 1e-4
    assert diag["clip_fraction"] == 0.0
    assert abs(diag["approx_kl"]) < 1e-5


def test_surrogate_zero_advantage_zero_policy_gradient():
    params, _, _ = _small_setup()
    obs, actions, old_logp, _ = _surrogate_inputs(params)
    adv = np.zeros(len(obs))
    returns = np.zeros(len(obs))
    cfg = TrainConfig(value_coef=0.0, entropy_coef=0.0)
    leaves = params.as_tensors()
    loss, _ = ppo_surrogate(leaves, obs, actions, old_logp, adv, returns,
                            cfg)
    grads = backprop(loss, leaves)
    for name in params.names():
        if name.startswith("pi."):
            assert np.allclose(grads[name], 0.0, atol=1e-10), name


def test_surrogate_hand_computed_two_samples():
    params, _, _ = _small_setup()
    obs, actions, old_logp, _ = _surrogate_inputs(params, n=2)
    from reorient.teacher import policy_mean
    # shift old_logp so the ratios leave the clip band both ways
    old_logp = old_logp + np.array([0.5, -0.5])
    adv = np.array([1.0, -2.0])
    cfg = TrainConfig(value_coef=0.0, entropy_coef=0.0)
    _, diag = ppo_surrogate(params.as_tensors(), obs, actions, old_logp,
                            adv, np.zeros(2), cfg)
    mu = policy_mean(params, obs).data
    log_std = params["pi.log_std"].astype(np.float64)
    new_logp = gaussian_logp(actions, mu, log_std)
    ratio = np.exp(new_logp - old_logp)
    expect = np.mean(np.minimum(ratio * adv,
                                np.clip(ratio, 0.8, 1.2) * adv))
    assert abs(diag["surrogate"] - expect) < 1e-5


def test_ppo_update_normalizes_advantages_and_runs():
    params, task, rng = _small_setup(seed=6)
    batch = collect_rollouts(params, task, 8, rng)
    cfg = TrainConfig(minibatch=16, epochs=1)
    v0 = params.version
    diag = ppo_update(params, OptimizerState(params), batch, cfg, rng)
    assert params.version > v0
    assert "clip_fraction" in diag and "approx_kl" in diag
    # the normalization applied inside matches the documented invariant
    adv, _ = gae(batch.rewards, batch.values, batch.dones, cfg.gamma,
                 cfg.lam, batch.last_values)
    norm = (adv - adv.mean()) / (adv.std() + 1e-8)
    assert abs(norm.mean()) < 1e-6
    assert abs(norm.std() - 1.0) < 1e-3


# -- training loop -----------------------------------------------------


def _smoke_config(seed=0):
    return TrainConfig(n_envs=4, rollout_horizon=8, minibatch=32,
                       epochs=1, hidden=(16, 16), total_steps=128,
                       eval_every=64, eval_episodes=2, seed=seed)


def test_train_teacher_smoke(tmp_path):
    ckpt, curve, last = train_teacher(_smoke_config(),
                                      out_dir=str(tmp_path / "t"))
    assert (tmp_path / "t" / "curve.csv").exists()
    with open(curve) as fh:
        lines = fh.read().strip().splitlines()
    assert lines[0] == "env_steps,success_rate,mean_episode_reward," \
                       "mean_dtheta_at_end"
    assert len(lines) >= 2
    from reorient.nn import ParamSet
    loaded = ParamSet.load(ckpt)
    assert "pi.w0" in loaded and "vf.w0" in loaded


def test_train_teacher_curve_reproducible(tmp_path):
    files = []
    for d in ("a", "b"):
        _, curve, _ = train_teacher(_smoke_config(seed=9),
                                    out_dir=str(tmp_path / d))
        with open(curve) as fh:
            files.append(fh.read())
    assert files[0] == files[1]


def test_evaluate_teacher_reports_fields():
    params, _, _ = _small_setup()
    cfg = TrainConfig(eval_episodes=2)
    env_cfg = EnvConfig(horizon=20).finalize()
    out = evaluate_teacher(params, env_cfg, cfg)
    assert set(out) == {"success_rate", "mean_episode_reward",
                        "mean_dtheta_at_end"}
    assert 0.0 <= out["success_rate"] <= 1.0
