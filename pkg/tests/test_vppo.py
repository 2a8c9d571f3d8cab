"""Tests for vote decoding, advantage arithmetic, the clipped-surrogate loss
(including analytic-vs-finite-difference gradients), rollout collection, the
training loop, transfer warm-starts, and policy persistence."""

import math

import numpy as np
import pytest

from relaysched.env import AoiEnv
from relaysched.nets import gaussian_logprob
from relaysched.vppo import (
    PolicyParams,
    TrainConfig,
    act,
    collect_rollouts,
    compute_advantages,
    decode_votes,
    discounted_returns,
    evaluate_policy,
    init_policy,
    load_policy,
    ppo_loss,
    save_policy,
    train,
    transfer_init,
)

from test_network import make_topology


# ---------------------------------------------------------------------------
# decoding


def test_decode_per_relay_top_votes():
    # M=4 over two relays of two devices, L=1: each relay keeps its larger vote
    topo = make_topology(M=4, N=2, L=1, K=2)
    votes = np.array([0.3, 0.9, 0.8, 0.1, 5.0, 1.0, 2.0, 3.0])
    action = decode_votes(votes, topo)
    assert action.sample_sets == ((1,), (2,))
    # update votes 5,1,2,3 -> top-2 are devices 0 and 3
    assert action.update_set == (0, 3)


def test_decode_tie_prefers_lowest_index():
    topo = make_topology(M=3, N=1, L=1, K=2)
    action = decode_votes(np.zeros(6), topo)
    assert action.sample_sets == ((0,),)
    assert action.update_set == (0, 1)


def test_decode_channel_surplus_takes_whole_group():
    topo = make_topology(M=2, N=1, L=5, K=9)
    action = decode_votes(np.array([-1.0, -2.0, -3.0, -4.0]), topo)
    assert action.sample_sets == ((0, 1),)
    assert action.update_set == (0, 1)


def test_decode_monotone_transform_invariant():
    topo = make_topology(M=6, N=2, L=2, K=3)
    rng = np.random.default_rng(5)
    for _ in range(50):
        votes = rng.standard_normal(12)
        same = decode_votes(np.tanh(votes) * 7.5 + 2.0, topo)
        assert decode_votes(votes, topo) == same


def test_decode_rejects_wrong_width():
    topo = make_topology(M=3, N=1, L=1, K=1)
    with pytest.raises(ValueError):
        decode_votes(np.zeros(5), topo)


def test_decode_fuzz_always_feasible():
    from relaysched.network import validate_action

    rng = np.random.default_rng(11)
    for _ in range(300):
        M = int(rng.integers(1, 9))
        N = int(rng.integers(1, M + 1))
        topo = make_topology(
            M=M, N=N, L=int(rng.integers(1, 5)), K=int(rng.integers(1, 12))
        )
        action = decode_votes(rng.standard_normal(2 * M) * 10, topo)
        validate_action(action, topo)  # raises on any violation


# ---------------------------------------------------------------------------
# acting


def test_act_deterministic_uses_mean_votes():
    topo = make_topology(M=3, N=1, L=1, K=1)
    policy = init_policy(3, z=2, horizon=20, hidden=(8,), rng=np.random.default_rng(0))
    obs = np.linspace(0.0, 1.0, policy.observation_dim)
    action, votes, logp = act(policy, topo, obs, deterministic=True)
    np.testing.assert_array_equal(votes, policy.actor.forward(obs))
    assert np.isfinite(logp)
    action2, votes2, _ = act(policy, topo, obs, deterministic=True)
    assert action == action2
    np.testing.assert_array_equal(votes, votes2)


def test_act_with_tiny_std_matches_deterministic():
    topo = make_topology(M=3, N=1, L=2, K=2)
    policy = init_policy(3, z=1, horizon=20, hidden=(8,), rng=np.random.default_rng(1))
    policy.log_std[:] = -40.0  # sigma ~ 4e-18: noise cannot flip any ranking
    obs = np.linspace(-1.0, 1.0, policy.observation_dim)
    det_action, _, _ = act(policy, topo, obs, deterministic=True)
    sto_action, _, _ = act(policy, topo, obs, rng=np.random.default_rng(2))
    assert sto_action == det_action


def test_act_stochastic_requires_rng():
    topo = make_topology(M=2, N=1, L=1, K=1)
    policy = init_policy(2, z=1, horizon=20, hidden=(4,), rng=np.random.default_rng(0))
    with pytest.raises(ValueError):
        act(policy, topo, np.zeros(policy.observation_dim))


def test_act_logprob_matches_closed_form():
    topo = make_topology(M=2, N=1, L=1, K=1)
    policy = init_policy(2, z=1, horizon=20, hidden=(4,), rng=np.random.default_rng(3))
    obs = np.zeros(policy.observation_dim)
    _, votes, logp = act(policy, topo, obs, rng=np.random.default_rng(7))
    mu = policy.actor.forward(obs)
    assert logp == pytest.approx(
        float(gaussian_logprob(mu, policy.log_std, votes)), abs=1e-12
    )


# ---------------------------------------------------------------------------
# advantages and returns


def test_discounted_returns_hand_case():
    rewards = np.array([1.0, 2.0, 3.0])
    got = discounted_returns(rewards, 0.5)
    # G2=3, G1=2+0.5*3=3.5, G0=1+0.5*3.5=2.75
    np.testing.assert_allclose(got, [2.75, 3.5, 3.0])


def test_advantages_gamma_zero():
    rewards = np.array([-1.0, -2.0, -4.0])
    values = np.array([0.5, 0.25, -0.5])
    next_values = np.array([0.25, -0.5, 0.0])
    adv, rets = compute_advantages(rewards, values, next_values, 0.0)
    np.testing.assert_allclose(adv, rewards - values)
    np.testing.assert_allclose(rets, rewards)


def test_advantages_one_step_bootstrap():
    rewards = np.array([-2.0, -3.0])
    values = np.array([1.0, 2.0])
    next_values = np.array([2.0, 0.0])  # terminal successor value is zero
    adv, rets = compute_advantages(rewards, values, next_values, 0.9)
    np.testing.assert_allclose(adv, [-2.0 + 0.9 * 2.0 - 1.0, -3.0 + 0.0 - 2.0])
    np.testing.assert_allclose(rets, [-2.0 + 0.9 * -3.0, -3.0])


def test_advantages_batched_columns_independent():
    rng = np.random.default_rng(0)
    rewards = rng.standard_normal((5, 3))
    values = rng.standard_normal((5, 3))
    next_values = rng.standard_normal((5, 3))
    adv, rets = compute_advantages(rewards, values, next_values, 0.97)
    for e in range(3):
        a1, r1 = compute_advantages(
            rewards[:, e], values[:, e], next_values[:, e], 0.97
        )
        np.testing.assert_allclose(adv[:, e], a1)
        np.testing.assert_allclose(rets[:, e], r1)


# ---------------------------------------------------------------------------
# loss arithmetic


def _tiny_policy(M=1, z=1, hidden=(6,), seed=0):
    return init_policy(M, z=z, horizon=20, hidden=hidden, rng=np.random.default_rng(seed))


def _batch_with_ratio(policy, obs, ratio, advantage, ret=0.0):
    """Single-sample batch engineered so the likelihood ratio equals `ratio`:
    votes sit at the current mean and logp_old absorbs the offset."""
    mu = policy.actor.forward(obs)
    votes = mu.copy()
    logp_new = float(gaussian_logprob(mu, policy.log_std, votes))
    return {
        "obs": obs[None, :],
        "votes": votes[None, :],
        "logp_old": np.array([logp_new - math.log(ratio)]),
        "advantages": np.array([advantage]),
        "returns": np.array([ret]),
    }


def test_ppo_loss_clips_large_ratio_positive_advantage():
    policy = _tiny_policy()
    cfg = TrainConfig(clip_eps=0.2, value_coef=0.5, entropy_coef=0.0)
    obs = np.zeros(policy.observation_dim)
    batch = _batch_with_ratio(policy, obs, ratio=1.5, advantage=2.0)
    _, _, stats = ppo_loss(batch, policy, cfg)
    # min(1.5 * 2, 1.2 * 2) = 2.4, negated
    assert stats["actor_term"] == pytest.approx(-2.4, abs=1e-9)
    assert stats["clip_fraction"] == 1.0
    assert stats["mean_ratio"] == pytest.approx(1.5, abs=1e-9)


def test_ppo_loss_clips_small_ratio_negative_advantage():
    policy = _tiny_policy()
    cfg = TrainConfig(clip_eps=0.2, entropy_coef=0.0)
    obs = np.zeros(policy.observation_dim)
    batch = _batch_with_ratio(policy, obs, ratio=0.5, advantage=-1.0)
    _, _, stats = ppo_loss(batch, policy, cfg)
    # min(0.5 * -1, 0.8 * -1) = -0.8, negated
    assert stats["actor_term"] == pytest.approx(0.8, abs=1e-9)


def test_ppo_loss_unclipped_ratio_passes_through():
    policy = _tiny_policy()
    cfg = TrainConfig(clip_eps=0.2, entropy_coef=0.0)
    obs = np.zeros(policy.observation_dim)
    batch = _batch_with_ratio(policy, obs, ratio=1.1, advantage=3.0)
    _, _, stats = ppo_loss(batch, policy, cfg)
    assert stats["actor_term"] == pytest.approx(-3.3, abs=1e-9)
    assert stats["clip_fraction"] == 0.0


def test_ppo_loss_total_combines_three_terms():
    policy = _tiny_policy()
    cfg = TrainConfig(clip_eps=0.2, value_coef=0.5, entropy_coef=0.01)
    obs = np.zeros(policy.observation_dim)
    batch = _batch_with_ratio(policy, obs, ratio=1.0, advantage=1.0, ret=2.0)
    loss, _, stats = ppo_loss(batch, policy, cfg)
    expected = (
        stats["actor_term"]
        + 0.5 * stats["critic_mse"]
        - 0.01 * stats["entropy"]
    )
    assert loss == pytest.approx(expected, abs=1e-12)


def test_ppo_loss_clipped_sample_gives_zero_actor_gradient():
    policy = _tiny_policy()
    cfg = TrainConfig(clip_eps=0.2, entropy_coef=0.01)
    obs = np.full(policy.observation_dim, 0.3)
    batch = _batch_with_ratio(policy, obs, ratio=2.0, advantage=1.0)
    _, grads, _ = ppo_loss(batch, policy, cfg)
    n_actor = len(policy.actor.params)
    for g in grads[:n_actor]:
        np.testing.assert_array_equal(g, np.zeros_like(g))
    # the log-std gradient keeps only the entropy bonus term
    np.testing.assert_allclose(grads[n_actor], -cfg.entropy_coef)


def test_ppo_loss_gradients_match_finite_differences():
    policy = _tiny_policy(M=2, z=1, hidden=(8,), seed=4)
    cfg = TrainConfig(clip_eps=0.2, value_coef=0.5, entropy_coef=0.01)
    rng = np.random.default_rng(9)
    B = 6
    obs = rng.standard_normal((B, policy.observation_dim))
    mu = policy.actor.forward(obs)
    votes = mu + 0.7 * rng.standard_normal(mu.shape)
    logp = gaussian_logprob(mu, policy.log_std, votes)
    # offsets keep every ratio well inside or well outside the clip window
    offsets = np.array([0.05, -0.05, 0.8, -0.8, 0.02, -0.6])
    batch = {
        "obs": obs,
        "votes": votes,
        "logp_old": logp - offsets,
        "advantages": rng.standard_normal(B),
        "returns": rng.standard_normal(B),
    }
    _, grads, _ = ppo_loss(batch, policy, cfg)
    params = policy.param_list()
    h = 1e-6
    coord_rng = np.random.default_rng(21)
    worst = 0.0
    for p, g in zip(params, grads):
        flat_p = p.ravel()
        flat_g = g.ravel()
        n_checks = min(6, flat_p.size)
        for idx in coord_rng.choice(flat_p.size, size=n_checks, replace=False):
            keep = flat_p[idx]
            flat_p[idx] = keep + h
            up, _, _ = ppo_loss(batch, policy, cfg)
            flat_p[idx] = keep - h
            down, _, _ = ppo_loss(batch, policy, cfg)
            flat_p[idx] = keep
            fd = (up - down) / (2 * h)
            denom = max(abs(fd), abs(flat_g[idx]), 1e-8)
            worst = max(worst, abs(fd - flat_g[idx]) / denom)
    assert worst < 1e-4, f"worst finite-difference mismatch {worst}"


# ---------------------------------------------------------------------------
# collection


def _small_envs(n_envs=3, M=2, N=1, L=1, K=1, horizon=4, loss=0.2):
    topo = make_topology(M=M, N=N, L=L, K=K, loss_s=loss, loss_u=loss)
    return [
        AoiEnv(topo, z=2, horizon=horizon, seed=np.random.SeedSequence((40, e)))
        for e in range(n_envs)
    ]


def test_collect_buffer_shapes_and_identities():
    envs = _small_envs()
    T, E = envs[0].horizon, len(envs)
    policy = init_policy(2, z=2, horizon=T, hidden=(8,), rng=np.random.default_rng(0))
    buffer, stats = collect_rollouts(
        envs, policy.actor, policy.log_std, policy.critic,
        np.random.default_rng(1), gamma=0.9,
    )
    B = T * E
    assert buffer["obs"].shape == (B, envs[0].observation_dim)
    assert buffer["votes"].shape == (B, 4)
    for key in ("logp_old", "rewards", "values", "next_values",
                "advantages", "returns", "dones"):
        assert buffer[key].shape == (B,)
    # advantage identity holds exactly on the raw stored pieces
    np.testing.assert_array_equal(
        buffer["advantages"],
        buffer["rewards"] + 0.9 * buffer["next_values"] - buffer["values"],
    )
    # flat layout is slot-major: episode e of slot t sits at t*E + e
    dones = buffer["dones"].reshape(T, E)
    assert dones[-1].all() and not dones[:-1].any()
    # stored old log-probs match a recomputation under the same actor
    mu = policy.actor.forward(buffer["obs"])
    np.testing.assert_allclose(
        buffer["logp_old"],
        gaussian_logprob(mu, policy.log_std, buffer["votes"]),
        atol=1e-9,
    )
    # successor observations chain into the next slot's observations
    obs_te = buffer["obs"].reshape(T, E, -1)
    next_te = buffer["next_obs"].reshape(T, E, -1)
    np.testing.assert_array_equal(next_te[:-1], obs_te[1:])
    # returns are discounted reward suffix sums per episode
    rew = buffer["rewards"].reshape(T, E)
    np.testing.assert_allclose(
        buffer["returns"].reshape(T, E), discounted_returns(rew, 0.9), atol=1e-12
    )
    assert stats["mean_reward"] == pytest.approx(float(np.mean(rew)))
    assert -stats["mean_aoi_tbs"] == pytest.approx(stats["mean_reward"])


def test_first_epoch_ratios_are_one():
    envs = _small_envs(n_envs=4, horizon=5)
    policy = init_policy(2, z=2, horizon=5, hidden=(16,), rng=np.random.default_rng(2))
    buffer, _ = collect_rollouts(
        envs, policy.actor, policy.log_std, policy.critic,
        np.random.default_rng(3), gamma=0.99,
    )
    batch = {
        "obs": buffer["obs"],
        "votes": buffer["votes"],
        "logp_old": buffer["logp_old"],
        "advantages": buffer["advantages"],
        "returns": buffer["returns"],
    }
    mu = policy.actor.forward(batch["obs"])
    logp_new = gaussian_logprob(mu, policy.log_std, batch["votes"])
    ratios = np.exp(logp_new - batch["logp_old"])
    np.testing.assert_allclose(ratios, 1.0, atol=1e-9)
    _, _, stats = ppo_loss(batch, policy, TrainConfig())
    assert stats["mean_ratio"] == pytest.approx(1.0, abs=1e-9)
    assert stats["clip_fraction"] == 0.0


def test_collect_is_deterministic_given_seeds():
    def run():
        envs = _small_envs(n_envs=2, horizon=3)
        policy = init_policy(
            2, z=2, horizon=3, hidden=(8,), rng=np.random.default_rng(6)
        )
        buf, _ = collect_rollouts(
            envs, policy.actor, policy.log_std, policy.critic,
            np.random.default_rng(7), gamma=0.99,
        )
        return buf

    a, b = run(), run()
    for key in a:
        np.testing.assert_array_equal(a[key], b[key])


# ---------------------------------------------------------------------------
# training loop


def _factory(topo, horizon, z=2, tag=0):
    def make(i):
        return AoiEnv(topo, z=z, horizon=horizon, seed=np.random.SeedSequence((tag, i)))

    return make


def _smoke_cfg(**over):
    base = dict(
        total_episodes=4,
        buffer_size=8,  # horizon 4 -> two parallel environments
        minibatch_size=8,
        epochs=2,
        hidden=(8,),
        z=2,
        seed=5,
    )
    base.update(over)
    return TrainConfig(**base)


def test_train_runs_and_logs():
    topo = make_topology(M=2, N=1, L=1, K=1, loss_s=0.1, loss_u=0.1)
    policy, rows = train(_factory(topo, horizon=4), _smoke_cfg())
    assert [r["iteration"] for r in rows] == [1, 2]
    assert [r["episodes_seen"] for r in rows] == [2, 4]
    for row in rows:
        for key in ("mean_reward", "mean_aoi_tbs", "mean_aoi_relay",
                    "actor_loss", "critic_loss", "entropy"):
            assert np.isfinite(row[key])
        assert row["mean_reward"] == pytest.approx(-row["mean_aoi_tbs"])
    assert policy.n_devices == 2 and policy.horizon == 4


def test_train_zero_learning_rate_leaves_params_unchanged():
    topo = make_topology(M=2, N=1, L=1, K=1, loss_s=0.1, loss_u=0.1)
    cfg = _smoke_cfg(learning_rate=0.0)
    fresh = init_policy(2, z=2, horizon=4, hidden=(8,),
                        rng=np.random.default_rng(99))
    before = [p.copy() for p in fresh.param_list()]
    policy, _ = train(_factory(topo, horizon=4), cfg, initial_policy=fresh)
    for kept, now in zip(before, policy.param_list()):
        np.testing.assert_array_equal(kept, now)


def test_train_is_deterministic_for_a_seed():
    topo = make_topology(M=2, N=1, L=1, K=1, loss_s=0.1, loss_u=0.1)
    p1, r1 = train(_factory(topo, horizon=4), _smoke_cfg())
    p2, r2 = train(_factory(topo, horizon=4), _smoke_cfg())
    for a, b in zip(p1.param_list(), p2.param_list()):
        np.testing.assert_array_equal(a, b)
    assert r1 == r2
    p3, _ = train(_factory(topo, horizon=4), _smoke_cfg(seed=6))
    assert any(
        not np.array_equal(a, b)
        for a, b in zip(p1.param_list(), p3.param_list())
    )


def test_train_rejects_mismatched_policy():
    topo = make_topology(M=2, N=1, L=1, K=1)
    wrong = init_policy(3, z=2, horizon=4, hidden=(8,),
                        rng=np.random.default_rng(0))
    with pytest.raises(ValueError):
        train(_factory(topo, horizon=4), _smoke_cfg(), initial_policy=wrong)


def test_evaluate_policy_deterministic_and_bounded():
    topo = make_topology(M=2, N=1, L=1, K=1, loss_s=0.3, loss_u=0.3)
    policy = init_policy(2, z=2, horizon=4, hidden=(8,),
                         rng=np.random.default_rng(12))
    r1, t1 = evaluate_policy(policy, topo, episodes=8, seed=3)
    r2, t2 = evaluate_policy(policy, topo, episodes=8, seed=3)
    np.testing.assert_array_equal(r1, r2)
    np.testing.assert_array_equal(t1, t2)
    assert r1.shape == (8,)
    # ages live in [1, t] and the chain keeps relays at least as fresh
    assert (r1 >= 1.0).all() and (t1 <= 5.0).all() and (t1 >= r1).all()


# ---------------------------------------------------------------------------
# transfer


def _pretrained():
    policy = init_policy(4, z=2, horizon=20, hidden=(8, 8),
                         rng=np.random.default_rng(17))
    for p in policy.param_list():
        p += 0.25  # make every tensor distinguishable from a fresh init
    return policy


def test_transfer_adapt_copies_everything():
    pre = _pretrained()
    post = transfer_init(pre, "adapt", np.random.default_rng(0))
    for a, b in zip(pre.param_list(), post.param_list()):
        np.testing.assert_array_equal(a, b)
        assert a is not b
    post.actor.weights[0][0, 0] += 1.0
    assert pre.actor.weights[0][0, 0] != post.actor.weights[0][0, 0]


def test_transfer_explore_keeps_trunk_resets_head():
    pre = _pretrained()
    post = transfer_init(pre, "explore", np.random.default_rng(1))
    for i in range(len(pre.actor.weights) - 1):
        np.testing.assert_array_equal(pre.actor.weights[i], post.actor.weights[i])
        np.testing.assert_array_equal(pre.actor.biases[i], post.actor.biases[i])
    assert not np.array_equal(pre.actor.weights[-1], post.actor.weights[-1])
    np.testing.assert_array_equal(post.actor.biases[-1], 0.0)
    np.testing.assert_array_equal(post.log_std, np.zeros(8))
    for a, b in zip(pre.critic.params, post.critic.params):
        np.testing.assert_array_equal(a, b)
    # the re-drawn head keeps the small-output scale of a fresh actor
    assert np.abs(post.actor.weights[-1]).max() < 0.1


def test_transfer_uninitialized_is_fresh():
    pre = _pretrained()
    post = transfer_init(pre, "uninitialized", np.random.default_rng(2))
    assert not np.array_equal(pre.actor.weights[0], post.actor.weights[0])
    np.testing.assert_array_equal(post.log_std, np.zeros(8))
    direct = init_policy(4, z=2, horizon=20, hidden=(8, 8),
                         rng=np.random.default_rng(2))
    for a, b in zip(direct.param_list(), post.param_list()):
        np.testing.assert_array_equal(a, b)


def test_transfer_rejects_unknown_mode():
    with pytest.raises(ValueError):
        transfer_init(_pretrained(), "finetune")


# ---------------------------------------------------------------------------
# persistence


def test_policy_round_trip(tmp_path):
    topo = make_topology(M=4, N=2, L=1, K=2)
    policy = _pretrained()
    path = tmp_path / "policy.npz"
    save_policy(path, policy)
    loaded = load_policy(path)
    for a, b in zip(policy.param_list(), loaded.param_list()):
        np.testing.assert_array_equal(a, b)
    assert (loaded.n_devices, loaded.stack, loaded.horizon) == (4, 2, 20)
    obs = np.linspace(0, 1, policy.observation_dim)
    a1, v1, _ = act(policy, topo, obs, deterministic=True)
    a2, v2, _ = act(loaded, topo, obs, deterministic=True)
    assert a1 == a2
    np.testing.assert_array_equal(v1, v2)
