"""Vote-based PPO scheduler with a linear action interface.

Instead of choosing among the combinatorial set of feasible sample/update
sets, the policy emits 2M real-valued votes: one sampling vote and one
updating vote per device.  Decoding keeps, per relay, the L highest sampling
votes of its own devices, and globally the K highest updating votes — so the
network's output width grows linearly with the number of devices while the
decoded action is always feasible.

Training is clipped-surrogate PPO over fixed-horizon episodes: collect E
episodes under the previous policy, compute one-step advantages against the
critic, then run a fixed number of epochs each taking one random minibatch
from the buffer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from relaysched.env import AoiEnv
from relaysched.nets import (
    Adam,
    Mlp,
    gaussian_entropy,
    gaussian_logprob,
    load_checkpoint,
    orthogonal_init,
    save_checkpoint,
)
from relaysched.network import Action, Topology

__all__ = [
    "PolicyParams",
    "TrainConfig",
    "TrainingDiverged",
    "act",
    "collect_rollouts",
    "compute_advantages",
    "decode_votes",
    "evaluate_policy",
    "init_policy",
    "load_policy",
    "ppo_loss",
    "save_policy",
    "train",
    "transfer_init",
]

TRANSFER_MODES = ("uninitialized", "explore", "adapt")


class TrainingDiverged(RuntimeError):
    """Optimization produced a non-finite loss or gradient."""


@dataclass
class TrainConfig:
    """Hyperparameters for the PPO trainer."""

    gamma: float = 0.99
    clip_eps: float = 0.2
    learning_rate: float = 2.5e-4
    epochs: int = 10
    minibatch_size: int = 512
    buffer_size: int = 2048
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    total_episodes: int = 20_000
    hidden: tuple[int, int] = (256, 256)
    z: int = 4
    seed: int = 0
    checkpoint_every: int = 0  # iterations between checkpoints; 0 = final only

    def __post_init__(self):
        if not (0.0 < self.clip_eps < 1.0):
            raise ValueError(f"clip_eps must lie in (0, 1), got {self.clip_eps}")
        if not (0.0 <= self.gamma <= 1.0):
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if self.minibatch_size < 1 or self.buffer_size < 1:
            raise ValueError("minibatch_size and buffer_size must be positive")
        if self.epochs < 1 or self.total_episodes < 1:
            raise ValueError("epochs and total_episodes must be positive")
        if self.z < 1:
            raise ValueError(f"stack depth must be >= 1, got {self.z}")


@dataclass
class PolicyParams:
    """Actor (vote means + learnable log-stds) and critic parameters."""

    actor: Mlp
    log_std: np.ndarray
    critic: Mlp
    n_devices: int
    stack: int
    horizon: int

    def param_list(self) -> list[np.ndarray]:
        """Live parameter arrays in a fixed order (actor, log_std, critic)."""
        return self.actor.params + [self.log_std] + self.critic.params

    def copy(self) -> "PolicyParams":
        return PolicyParams(
            actor=self.actor.copy(),
            log_std=self.log_std.copy(),
            critic=self.critic.copy(),
            n_devices=self.n_devices,
            stack=self.stack,
            horizon=self.horizon,
        )

    @property
    def observation_dim(self) -> int:
        return self.stack * (2 * self.n_devices + 1)


def init_policy(
    M: int,
    z: int,
    horizon: int,
    hidden=(256, 256),
    rng: np.random.Generator | None = None,
) -> PolicyParams:
    """Fresh actor/critic pair; the actor head starts near zero so initial
    votes are dominated by the unit-variance exploration noise."""
    if rng is None:
        rng = np.random.default_rng(0)
    obs_dim = z * (2 * M + 1)
    actor = Mlp((obs_dim, *hidden, 2 * M), rng, out_gain=0.01)
    critic = Mlp((obs_dim, *hidden, 1), rng, out_gain=1.0)
    return PolicyParams(
        actor=actor,
        log_std=np.zeros(2 * M, dtype=np.float64),
        critic=critic,
        n_devices=M,
        stack=z,
        horizon=horizon,
    )


# ---------------------------------------------------------------------------
# action decoding


def decode_votes(votes: np.ndarray, topo: Topology) -> Action:
    """Rank-based decoding of 2M votes into a feasible action.

    The first M entries are sampling votes (device-indexed); each relay keeps
    the min(L, group size) largest among its own devices.  The last M entries
    are updating votes; the min(K, M) largest win globally.  Ties break
    toward the lowest device index, so any strictly increasing transform of
    the votes decodes to the same action.
    """
    votes = np.asarray(votes, dtype=np.float64).ravel()
    if votes.shape[0] != 2 * topo.M:
        raise ValueError(f"expected {2 * topo.M} votes, got {votes.shape[0]}")
    sample_votes = votes[: topo.M]
    update_votes = votes[topo.M :]
    sample_sets = []
    for group in topo.groups:
        grant = min(topo.L, len(group))
        ranked = sorted(group, key=lambda m: (-sample_votes[m], m))
        sample_sets.append(tuple(sorted(ranked[:grant])))
    grant = min(topo.K, topo.M)
    ranked = sorted(range(topo.M), key=lambda m: (-update_votes[m], m))
    update_set = tuple(sorted(ranked[:grant]))
    return Action(tuple(sample_sets), update_set)


def act(
    policy: PolicyParams,
    topo: Topology,
    obs: np.ndarray,
    rng: np.random.Generator | None = None,
    deterministic: bool = False,
):
    """One decision: (Action, votes, log-probability of the votes)."""
    mu = policy.actor.forward(obs)
    if deterministic:
        votes = mu.copy()
    else:
        if rng is None:
            raise ValueError("stochastic action needs a generator")
        votes = mu + np.exp(policy.log_std) * rng.standard_normal(mu.shape)
    logp = float(gaussian_logprob(mu, policy.log_std, votes))
    return decode_votes(votes, topo), votes, logp


# ---------------------------------------------------------------------------
# advantages


def discounted_returns(rewards: np.ndarray, gamma: float) -> np.ndarray:
    """Per-step discounted reward suffix sums along axis 0."""
    returns = np.empty_like(np.asarray(rewards, dtype=np.float64))
    acc = np.zeros(returns.shape[1:], dtype=np.float64)
    for t in range(returns.shape[0] - 1, -1, -1):
        acc = rewards[t] + gamma * acc
        returns[t] = acc
    return returns


def compute_advantages(rewards, values, next_values, gamma):
    """One-step advantages and discounted returns for one or more episodes.

    Arrays are (T,) or (T, E) along the slot axis.  ``next_values`` must hold
    the critic's value of the successor state with 0 at episode end.
    Returns (advantages, returns); returns serve as the critic target.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    next_values = np.asarray(next_values, dtype=np.float64)
    adv = rewards + gamma * next_values - values
    return adv, discounted_returns(rewards, gamma)


# ---------------------------------------------------------------------------
# loss


def ppo_loss(batch: dict, policy: PolicyParams, cfg: TrainConfig):
    """Clipped-surrogate loss with analytic gradients.

    batch keys: obs (B,D), votes (B,2M), logp_old (B,), advantages (B,),
    returns (B,).  Returns (loss, grads, stats) with grads aligned to
    policy.param_list().  The actor term clips the likelihood ratio at
    1 +/- clip_eps; minimizing the total also fits the critic by squared
    error and pays an entropy bonus.
    """
    obs = batch["obs"]
    votes = batch["votes"]
    logp_old = batch["logp_old"]
    advantages = batch["advantages"]
    returns = batch["returns"]
    B = obs.shape[0]

    mu = policy.actor.forward(obs)
    log_std = policy.log_std
    logp_new = gaussian_logprob(mu, log_std, votes)
    zeta = np.exp(logp_new - logp_old)
    clipped = np.clip(zeta, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps)
    surr_raw = zeta * advantages
    surr_clip = clipped * advantages
    actor_term = -float(np.mean(np.minimum(surr_raw, surr_clip)))

    # gradient flows only through the unclipped branch; whenever the clipped
    # branch is strictly smaller the ratio sits outside the clip window and
    # its derivative is zero
    use_raw = surr_raw <= surr_clip
    dlogp = np.where(use_raw, -advantages * zeta, 0.0) / B
    inv_var = np.exp(-2.0 * log_std)
    dmu = dlogp[:, None] * (votes - mu) * inv_var
    actor_grads = policy.actor.backward(dmu)
    dlogp_dls = np.square(votes - mu) * inv_var - 1.0
    g_log_std = (dlogp[:, None] * dlogp_dls).sum(axis=0) - cfg.entropy_coef

    v = policy.critic.forward(obs)[:, 0]
    err = returns - v
    critic_mse = float(np.mean(np.square(err)))
    critic_grads = policy.critic.backward(
        (-2.0 * cfg.value_coef / B * err)[:, None]
    )

    entropy = gaussian_entropy(log_std)
    loss = actor_term + cfg.value_coef * critic_mse - cfg.entropy_coef * entropy
    grads = actor_grads + [g_log_std] + critic_grads
    stats = {
        "actor_term": actor_term,
        "critic_mse": critic_mse,
        "entropy": entropy,
        "mean_ratio": float(np.mean(zeta)),
        "clip_fraction": float(np.mean(~use_raw)),
    }
    return loss, grads, stats


# ---------------------------------------------------------------------------
# rollout collection


def collect_rollouts(
    envs: list[AoiEnv],
    actor_old: Mlp,
    log_std_old: np.ndarray,
    critic: Mlp,
    vote_rng: np.random.Generator,
    gamma: float,
):
    """Run every environment for one episode in lockstep under the old policy.

    Returns a buffer dict of flat arrays (length E*T) plus per-iteration
    episode statistics.  Values come from the current critic; the terminal
    successor value is zero.
    """
    E = len(envs)
    topo = envs[0].topo
    T = envs[0].horizon
    M = topo.M
    obs_dim = envs[0].observation_dim
    sigma_old = np.exp(log_std_old)

    obs_buf = np.empty((T, E, obs_dim))
    next_obs_buf = np.empty((T, E, obs_dim))
    votes_buf = np.empty((T, E, 2 * M))
    logp_buf = np.empty((T, E))
    rew_buf = np.empty((T, E))
    val_buf = np.empty((T, E))
    done_buf = np.zeros((T, E), dtype=bool)
    relay_sum = 0.0
    tbs_sum = 0.0

    obs = np.stack([env.reset() for env in envs])
    for t in range(T):
        mu = actor_old.forward(obs)
        votes = mu + sigma_old * vote_rng.standard_normal(mu.shape)
        logp_buf[t] = gaussian_logprob(mu, log_std_old, votes)
        val_buf[t] = critic.forward(obs)[:, 0]
        obs_buf[t] = obs
        votes_buf[t] = votes
        next_obs = np.empty_like(obs)
        for e, env in enumerate(envs):
            o, r, done, info = env.step(decode_votes(votes[e], topo))
            next_obs[e] = o
            rew_buf[t, e] = r
            done_buf[t, e] = done
            snap = info["snapshot"]
            relay_sum += float(np.mean(snap.aoi_relay))
            tbs_sum += float(np.mean(snap.aoi_tbs))
        obs = next_obs
        next_obs_buf[t] = next_obs

    next_val = np.zeros((T, E))
    next_val[:-1] = val_buf[1:]  # terminal successor bootstraps at 0
    advantages, returns = compute_advantages(rew_buf, val_buf, next_val, gamma)

    B = T * E
    buffer = {
        "obs": obs_buf.reshape(B, obs_dim),
        "next_obs": next_obs_buf.reshape(B, obs_dim),
        "votes": votes_buf.reshape(B, 2 * M),
        "logp_old": logp_buf.reshape(B),
        "rewards": rew_buf.reshape(B),
        "values": val_buf.reshape(B),
        "next_values": next_val.reshape(B),
        "advantages": advantages.reshape(B),
        "returns": returns.reshape(B),
        "dones": done_buf.reshape(B),
    }
    stats = {
        "mean_reward": float(np.mean(rew_buf)),
        "mean_aoi_relay": relay_sum / (T * E),
        "mean_aoi_tbs": tbs_sum / (T * E),
    }
    return buffer, stats


# ---------------------------------------------------------------------------
# trainer


def train(
    env_factory,
    cfg: TrainConfig,
    checkpoint_dir=None,
    initial_policy: PolicyParams | None = None,
    progress=None,
):
    """PPO training loop.

    env_factory(i) must build the i-th rollout environment (same topology and
    horizon, distinct seeds).  Per iteration: copy the current policy, collect
    E = buffer_size // T episodes under the copy, normalize the advantages,
    then run cfg.epochs gradient steps each on one random minibatch.  Returns
    (policy, log_rows) where log_rows carries one dict per iteration.
    """
    T_probe = env_factory(0).horizon
    E = max(1, cfg.buffer_size // T_probe)
    envs = [env_factory(i) for i in range(E)]
    topo = envs[0].topo
    T = envs[0].horizon
    M = topo.M
    z = envs[0].z

    seed_seq = np.random.SeedSequence(cfg.seed)
    init_seq, vote_seq, batch_seq = seed_seq.spawn(3)
    if initial_policy is not None:
        policy = initial_policy.copy()
        if policy.observation_dim != envs[0].observation_dim:
            raise ValueError(
                f"policy expects observation width {policy.observation_dim}, "
                f"environment provides {envs[0].observation_dim}"
            )
        policy.horizon = T
    else:
        policy = init_policy(M, z, T, cfg.hidden, np.random.default_rng(init_seq))
    vote_rng = np.random.default_rng(vote_seq)
    batch_rng = np.random.default_rng(batch_seq)

    params = policy.param_list()
    adam = Adam(params, lr=cfg.learning_rate)
    iterations = math.ceil(cfg.total_episodes / E)
    buffer_len = E * T
    take = min(cfg.minibatch_size, buffer_len)

    log_rows = []
    for iteration in range(1, iterations + 1):
        actor_old = policy.actor.copy()
        log_std_old = policy.log_std.copy()
        buffer, roll_stats = collect_rollouts(
            envs, actor_old, log_std_old, policy.critic, vote_rng, cfg.gamma
        )
        adv = buffer["advantages"]
        adv_norm = (adv - adv.mean()) / (adv.std() + 1e-8)

        actor_losses, critic_losses, entropies = [], [], []
        for _epoch in range(cfg.epochs):
            idx = batch_rng.choice(buffer_len, size=take, replace=False)
            batch = {
                "obs": buffer["obs"][idx],
                "votes": buffer["votes"][idx],
                "logp_old": buffer["logp_old"][idx],
                "advantages": adv_norm[idx],
                "returns": buffer["returns"][idx],
            }
            loss, grads, stats = ppo_loss(batch, policy, cfg)
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at iteration {iteration}")
            try:
                adam.step(params, grads)
            except FloatingPointError as exc:
                raise TrainingDiverged(
                    f"non-finite gradient at iteration {iteration}"
                ) from exc
            actor_losses.append(stats["actor_term"])
            critic_losses.append(stats["critic_mse"])
            entropies.append(stats["entropy"])

        row = {
            "iteration": iteration,
            "episodes_seen": iteration * E,
            "mean_reward": roll_stats["mean_reward"],
            "mean_aoi_tbs": roll_stats["mean_aoi_tbs"],
            "mean_aoi_relay": roll_stats["mean_aoi_relay"],
            "actor_loss": float(np.mean(actor_losses)),
            "critic_loss": float(np.mean(critic_losses)),
            "entropy": float(np.mean(entropies)),
        }
        log_rows.append(row)
        if progress is not None:
            progress(row)
        if (
            checkpoint_dir is not None
            and cfg.checkpoint_every > 0
            and iteration % cfg.checkpoint_every == 0
        ):
            save_policy(f"{checkpoint_dir}/checkpoint_{iteration:05d}.npz", policy)

    if checkpoint_dir is not None:
        save_policy(f"{checkpoint_dir}/checkpoint_final.npz", policy)
    return policy, log_rows


# ---------------------------------------------------------------------------
# deterministic evaluation


def evaluate_policy(
    policy: PolicyParams,
    topo: Topology,
    episodes: int,
    seed: int,
    deterministic: bool = True,
):
    """Per-episode (relay, base-station) mean ages under the trained policy.

    Episodes run in lockstep with the deterministic vote means by default
    (pass deterministic=False to keep sampling).  Returns two arrays of
    length ``episodes``.
    """
    envs = [
        AoiEnv(
            topo,
            z=policy.stack,
            horizon=policy.horizon,
            seed=np.random.SeedSequence(entropy=(seed, e)),
        )
        for e in range(episodes)
    ]
    vote_rng = np.random.default_rng(np.random.SeedSequence(entropy=(seed, 10**9)))
    T = policy.horizon
    relay = np.zeros(episodes)
    tbs = np.zeros(episodes)
    obs = np.stack([env.reset() for env in envs])
    for _t in range(T):
        mu = policy.actor.forward(obs)
        if deterministic:
            votes = mu
        else:
            votes = mu + np.exp(policy.log_std) * vote_rng.standard_normal(mu.shape)
        next_obs = np.empty_like(obs)
        for e, env in enumerate(envs):
            o, _r, _done, info = env.step(decode_votes(votes[e], topo))
            next_obs[e] = o
            snap = info["snapshot"]
            relay[e] += float(np.mean(snap.aoi_relay))
            tbs[e] += float(np.mean(snap.aoi_tbs))
        obs = next_obs
    return relay / T, tbs / T


# ---------------------------------------------------------------------------
# transfer


def transfer_init(
    pretrained: PolicyParams, mode: str, rng: np.random.Generator | None = None
) -> PolicyParams:
    """Warm-start rules for moving a trained scheduler to a changed network.

    uninitialized: fresh random parameters (no reuse).
    adapt:         reuse everything as-is.
    explore:       reuse everything except the actor output layer and the
                   log-stds, which restart at their initial values so the
                   policy explores again from the reused features.
    """
    if mode not in TRANSFER_MODES:
        raise ValueError(f"mode must be one of {TRANSFER_MODES}, got {mode!r}")
    if rng is None:
        rng = np.random.default_rng(0)
    if mode == "uninitialized":
        hidden = pretrained.actor.sizes[1:-1]
        return init_policy(
            pretrained.n_devices, pretrained.stack, pretrained.horizon, hidden, rng
        )
    policy = pretrained.copy()
    if mode == "explore":
        fan_in, fan_out = policy.actor.sizes[-2], policy.actor.sizes[-1]
        policy.actor.weights[-1][:] = orthogonal_init(rng, fan_in, fan_out, 0.01)
        policy.actor.biases[-1][:] = 0.0
        policy.log_std[:] = 0.0
    return policy


# ---------------------------------------------------------------------------
# persistence


def save_policy(path, policy: PolicyParams) -> None:
    arrays = {}
    for i, (W, b) in enumerate(zip(policy.actor.weights, policy.actor.biases)):
        arrays[f"actor_w{i}"] = W
        arrays[f"actor_b{i}"] = b
    for i, (W, b) in enumerate(zip(policy.critic.weights, policy.critic.biases)):
        arrays[f"critic_w{i}"] = W
        arrays[f"critic_b{i}"] = b
    arrays["log_std"] = policy.log_std
    meta = {
        "actor_sizes": list(policy.actor.sizes),
        "critic_sizes": list(policy.critic.sizes),
        "n_devices": policy.n_devices,
        "stack": policy.stack,
        "horizon": policy.horizon,
    }
    save_checkpoint(path, arrays, meta)


def load_policy(path) -> PolicyParams:
    arrays, meta = load_checkpoint(path)
    rng = np.random.default_rng(0)
    actor = Mlp(meta["actor_sizes"], rng)
    critic = Mlp(meta["critic_sizes"], rng)
    for i in range(len(actor.weights)):
        actor.weights[i][:] = arrays[f"actor_w{i}"]
        actor.biases[i][:] = arrays[f"actor_b{i}"]
    for i in range(len(critic.weights)):
        critic.weights[i][:] = arrays[f"critic_w{i}"]
        critic.biases[i][:] = arrays[f"critic_b{i}"]
    return PolicyParams(
        actor=actor,
        log_std=arrays["log_std"].copy(),
        critic=critic,
        n_devices=int(meta["n_devices"]),
        stack=int(meta["stack"]),
        horizon=int(meta["horizon"]),
    )
