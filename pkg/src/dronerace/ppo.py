"""Proximal Policy Optimization on vectorized environments.

On-policy loop: collect a fixed horizon from N parallel environments,
estimate advantages with GAE, then run several epochs of clipped-surrogate
minibatch updates on the Gaussian policy and a separate value net.

All gradients are computed analytically through the package's dense-net
backward pass; optimizer state, minibatch shuffling, and action noise come
from generators spawned off one master seed, so a (seed, config) pair
reproduces training logs bitwise.

Environment protocol expected by train(): attributes ``n_envs``,
``obs_dim``, ``act_low``, ``act_high``; ``reset() -> obs (N, d)``;
``step(actions (N, 4)) -> (obs, rewards, dones, info)`` where info is a
dict of per-env arrays and carries ``episode_return`` / ``episode_length``
/ ``episode_gates`` entries valid where ``dones`` is set. Raw (unclamped)
action samples are passed to the environment, which applies its own
actuator clamping; the raw values are what the log-probabilities refer to.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import neuralnet as nn
from .neuralnet import Adam, GaussianPolicy, MlpNet


@dataclass
class PpoConfig:
    gamma: float = 0.999
    gae_lambda: float = 0.95
    clip_ratio: float = 0.2
    learning_rate: float = 3e-4
    rollout_horizon: int = 512
    minibatch_size: int = 8192
    epochs: int = 10
    value_coef: float = 0.5
    entropy_coef: float = 0.0
    total_steps: int = 5_000_000
    seed: int = 0
    hidden: tuple = (64, 64, 64)
    activation: str = "relu"
    init_std_frac: float = 1.0 / 3.0  # initial std as fraction of half-range
    policy_final_gain: float = 0.01
    hover_init: bool = True  # bias initial mean action to the env's hover command
    max_grad_norm: float = 0.5  # global-norm clip per net; 0 disables
    checkpoint_every: int = 0  # iterations; 0 disables intermediate saves

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must be in (0, 1]")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError("gae_lambda must be in [0, 1]")
        if self.clip_ratio <= 0.0:
            raise ValueError("clip_ratio must be > 0")
        self.hidden = tuple(int(h) for h in self.hidden)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PpoConfig":
        return cls(**d)


def compute_gae(rewards, values, dones, last_value, gamma, lam):
    """Generalized advantage estimation with done masking.

    Args:
        rewards, values, dones: arrays of shape (T,) or (T, N).
        last_value: bootstrap value for the state after the final step,
            scalar or (N,).

    Returns:
        (advantages, returns) with returns = advantages + values.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=float)
    if rewards.shape != values.shape or rewards.shape != dones.shape:
        raise ValueError("rewards, values, dones must have matching shapes")
    T = rewards.shape[0]
    adv = np.zeros_like(rewards)
    next_value = np.broadcast_to(np.asarray(last_value, dtype=float),
                                 rewards.shape[1:]).copy()
    next_adv = np.zeros(rewards.shape[1:])
    for t in range(T - 1, -1, -1):
        not_done = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * not_done - values[t]
        next_adv = delta + gamma * lam * not_done * next_adv
        adv[t] = next_adv
        next_value = values[t]
    return adv, adv + values


@dataclass
class RolloutBatch:
    """Flattened on-policy batch with normalized advantages."""

    obs: np.ndarray        # (B, obs_dim)
    actions: np.ndarray    # (B, act_dim), raw (unclamped) samples
    log_probs: np.ndarray  # (B,)
    rewards: np.ndarray    # (B,)
    values: np.ndarray     # (B,)
    dones: np.ndarray      # (B,)
    advantages: np.ndarray # (B,), zero mean / unit variance
    returns: np.ndarray    # (B,)

    def __post_init__(self):
        n = len(self.obs)
        for name in ("actions", "log_probs", "rewards", "values", "dones",
                     "advantages", "returns"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} length != obs length")

    @classmethod
    def from_rollout(cls, obs, actions, log_probs, rewards, values, dones,
                     last_values, gamma, lam) -> "RolloutBatch":
        """Build from (T, N, ...) rollout arrays; runs GAE and normalizes."""
        adv, ret = compute_gae(rewards, values, dones, last_values, gamma, lam)
        flat = lambda a: np.asarray(a).reshape(-1, *np.asarray(a).shape[2:])
        adv_f = flat(adv)
        adv_f = (adv_f - adv_f.mean()) / (adv_f.std() + 1e-8)
        return cls(flat(obs), flat(actions), flat(log_probs), flat(rewards),
                   flat(values), flat(dones).astype(float), adv_f, flat(ret))

    def __len__(self) -> int:
        return len(self.obs)


def surrogate_grads(policy: GaussianPolicy, value_net: MlpNet,
                    obs, actions, logp_old, advantages, returns,
                    clip_ratio, value_coef=0.5, entropy_coef=0.0):
    """Loss diagnostics and analytic gradients for one minibatch.

    The objective (minimized) is
        -mean(min(ratio*A, clip(ratio)*A)) + value_coef*MSE(V, returns)
        - entropy_coef*entropy.

    Returns:
        (policy_grads, value_grads, diag): gradient lists matching
        policy.params() and value_net.params(); diag carries scalar
        diagnostics (losses, KL estimate, clip fraction).
    """
    B = len(obs)
    mu = policy.mean(obs)
    std = np.exp(policy.log_std)
    z = (actions - mu) / std
    # same op order as sampling, so an unchanged policy gives ratio == 1
    logp_new = policy._log_prob_given_mean(actions, mu)
    with np.errstate(over="ignore"):
        ratio = np.exp(logp_new - logp_old)
    if not np.all(np.isfinite(ratio)):
        raise FloatingPointError(
            f"non-finite probability ratio; max(logp_new - logp_old) = "
            f"{float(np.max(logp_new - logp_old))}"
        )

    surr_plain = ratio * advantages
    surr_clip = np.clip(ratio, 1.0 - clip_ratio, 1.0 + clip_ratio) * advantages
    take_plain = surr_plain <= surr_clip
    policy_loss = -float(np.mean(np.minimum(surr_plain, surr_clip)))

    # d(-surrogate)/d(logp_new); the clipped branch has zero gradient
    dlogp = np.where(take_plain, -ratio * advantages, 0.0) / B
    # chain into the mean net output (through the affine action map)
    gy_mean = (dlogp[:, None] * z / std) * policy._half
    mean_grads, _ = nn.backward(policy.mean_net, obs, gy_mean)
    g_log_std = np.sum(dlogp[:, None] * (z * z - 1.0), axis=0)
    g_log_std -= entropy_coef  # d(-c_e * entropy)/d(log_std) = -c_e
    policy_grads = mean_grads + [g_log_std]

    v = nn.forward(value_net, obs)[:, 0]
    v_err = v - returns
    value_loss = float(np.mean(v_err * v_err))
    gy_value = (value_coef * 2.0 * v_err / B)[:, None]
    value_grads, _ = nn.backward(value_net, obs, gy_value)

    entropy = policy.entropy()
    total = policy_loss + value_coef * value_loss - entropy_coef * entropy
    if not np.isfinite(total):
        raise FloatingPointError(
            f"non-finite loss: policy={policy_loss} value={value_loss} "
            f"entropy={entropy} max|ratio|={np.abs(ratio).max()}"
        )
    diag = {
        "policy_loss": policy_loss,
        "value_loss": value_loss,
        "entropy": entropy,
        "kl": float(np.mean(logp_old - logp_new)),
        "clip_frac": float(np.mean(np.abs(ratio - 1.0) > clip_ratio)),
    }
    return policy_grads, value_grads, diag


def ppo_update(policy: GaussianPolicy, value_net: MlpNet, batch: RolloutBatch,
               config: PpoConfig, rng: np.random.Generator,
               policy_opt: Optional[Adam] = None,
               value_opt: Optional[Adam] = None) -> dict:
    """Run the configured epochs of shuffled minibatch updates in place.

    Returns mean diagnostics over all minibatches.
    """
    policy_opt = policy_opt or Adam(policy.params(), config.learning_rate)
    value_opt = value_opt or Adam(value_net.params(), config.learning_rate)
    agg: dict = {}
    count = 0
    n = len(batch)
    n_chunks = max(1, int(np.ceil(n / config.minibatch_size)))
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for idx in np.array_split(order, n_chunks):
            pg, vg, diag = surrogate_grads(
                policy, value_net,
                batch.obs[idx], batch.actions[idx], batch.log_probs[idx],
                batch.advantages[idx], batch.returns[idx],
                config.clip_ratio, config.value_coef, config.entropy_coef,
            )
            if config.max_grad_norm > 0:
                _clip_grad_norm(pg, config.max_grad_norm)
                _clip_grad_norm(vg, config.max_grad_norm)
            policy_opt.step(policy.params(), pg)
            value_opt.step(value_net.params(), vg)
            for k, val in diag.items():
                agg[k] = agg.get(k, 0.0) + val
            count += 1
    return {k: v / count for k, v in agg.items()}


def _clip_grad_norm(grads: list, max_norm: float) -> None:
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total > max_norm:
        scale = max_norm / total
        for g in grads:
            g *= scale


def make_policy_value(obs_dim: int, act_low, act_high, config: PpoConfig,
                      rng: np.random.Generator,
                      obs_offset=None, obs_scale=None, init_action=None):
    """Fresh Gaussian policy and value net for an environment's interface.

    If init_action is given (e.g. the hover command), the output-layer
    biases are set so the initial mean action equals it; otherwise the
    initial mean sits at the center of the action range.
    """
    act_low = np.asarray(act_low, dtype=float)
    act_high = np.asarray(act_high, dtype=float)
    sizes = [obs_dim, *config.hidden, len(act_low)]
    mean_net = nn.init_mlp(sizes, config.activation, rng,
                           input_offset=obs_offset, input_scale=obs_scale,
                           final_scale=config.policy_final_gain)
    if init_action is not None:
        center = 0.5 * (act_low + act_high)
        half = 0.5 * (act_high - act_low)
        mean_net.biases[-1][:] = (np.asarray(init_action, dtype=float) - center) / half
    log_std = np.log(config.init_std_frac * 0.5 * (act_high - act_low))
    policy = GaussianPolicy(mean_net, log_std, act_low, act_high)
    value_net = nn.init_mlp([obs_dim, *config.hidden, 1], config.activation,
                            rng, input_offset=obs_offset,
                            input_scale=obs_scale)
    return policy, value_net


@dataclass
class TrainResult:
    policy: GaussianPolicy
    value_net: MlpNet
    records: list
    log_path: Optional[Path] = None


def train(env_factory: Callable[[int], object], config: PpoConfig,
          out_dir=None, verbose: bool = False) -> TrainResult:
    """Full PPO run: alternate parallel rollouts and clipped updates.

    Args:
        env_factory: called with a derived master seed; must return an
            environment following the protocol in the module docstring.
        config: hyperparameters incl. the master seed and total step budget.
        out_dir: if given, writes ``training_log.jsonl`` plus policy/value
            checkpoints there.

    Returns:
        TrainResult with the trained nets and one record dict per iteration.
    """
    root = np.random.SeedSequence(config.seed)
    seed_env, seed_init, seed_act, seed_shuffle = root.spawn(4)
    env = env_factory(int(seed_env.generate_state(1)[0] % (2 ** 31)))
    init_rng = np.random.default_rng(seed_init)
    act_rng = np.random.default_rng(seed_act)
    shuffle_rng = np.random.default_rng(seed_shuffle)

    obs_offset = obs_scale = None
    if hasattr(env, "obs_normalization"):
        obs_offset, obs_scale = env.obs_normalization()
    init_action = None
    if config.hover_init and hasattr(env, "hover_action"):
        init_action = env.hover_action()
    policy, value_net = make_policy_value(
        env.obs_dim, env.act_low, env.act_high, config, init_rng,
        obs_offset, obs_scale, init_action,
    )
    policy_opt = Adam(policy.params(), config.learning_rate)
    value_opt = Adam(value_net.params(), config.learning_rate)

    out_dir = Path(out_dir) if out_dir is not None else None
    log_file = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = out_dir / "training_log.jsonl"
        log_file = open(log_path, "w")
        log_file.write(json.dumps(
            {"config": config.to_dict(), "n_envs": env.n_envs,
             "obs_dim": env.obs_dim}, sort_keys=True) + "\n")

    T, N = config.rollout_horizon, env.n_envs
    steps_per_iter = T * N
    n_iters = max(1, int(np.ceil(config.total_steps / steps_per_iter)))

    obs = env.reset()
    records = []
    t_start = time.perf_counter()
    try:
        for it in range(1, n_iters + 1):
            obs_buf = np.empty((T, N, env.obs_dim))
            act_buf = np.empty((T, N, len(env.act_low)))
            logp_buf = np.empty((T, N))
            rew_buf = np.empty((T, N))
            val_buf = np.empty((T, N))
            done_buf = np.empty((T, N), dtype=bool)
            ep_returns, ep_lengths, ep_gates = [], [], []

            for t in range(T):
                raw, _clamped, logp = policy.sample_raw(obs, act_rng)
                values = nn.forward(value_net, obs)[:, 0]
                obs_buf[t] = obs
                act_buf[t] = raw
                logp_buf[t] = logp
                val_buf[t] = values
                obs, rewards, dones, info = env.step(raw)
                rew_buf[t] = rewards
                done_buf[t] = dones
                if np.any(dones):
                    ep_returns.extend(info["episode_return"][dones])
                    ep_lengths.extend(info["episode_length"][dones])
                    if "episode_gates" in info:
                        ep_gates.extend(info["episode_gates"][dones])

            last_values = nn.forward(value_net, obs)[:, 0]
            batch = RolloutBatch.from_rollout(
                obs_buf, act_buf, logp_buf, rew_buf, val_buf, done_buf,
                last_values, config.gamma, config.gae_lambda,
            )
            try:
                diag = ppo_update(policy, value_net, batch, config,
                                  shuffle_rng, policy_opt, value_opt)
            except FloatingPointError as e:
                raise RuntimeError(
                    f"update aborted at iteration {it}: {e}") from e

            record = {
                "iteration": it,
                "env_steps": it * steps_per_iter,
                "episodes": len(ep_returns),
                "mean_return": float(np.mean(ep_returns)) if ep_returns else None,
                "mean_length": float(np.mean(ep_lengths)) if ep_lengths else None,
                "mean_gates": float(np.mean(ep_gates)) if ep_gates else None,
                "log_std": [float(v) for v in policy.log_std],
                **diag,
            }
            records.append(record)
            if log_file is not None:
                log_file.write(json.dumps(record, sort_keys=True) + "\n")
                log_file.flush()
            if verbose:
                elapsed = time.perf_counter() - t_start
                print(f"[{it}/{n_iters}] steps={record['env_steps']} "
                      f"return={record['mean_return']} "
                      f"gates={record['mean_gates']} kl={diag['kl']:.4f} "
                      f"({elapsed:.0f}s)", flush=True)
            if (out_dir is not None and config.checkpoint_every
                    and it % config.checkpoint_every == 0):
                nn.save_policy(policy, out_dir / f"policy_iter{it:05d}.drwf")
    finally:
        if log_file is not None:
            log_file.close()

    if out_dir is not None:
        nn.save_policy(policy, out_dir / "policy.drwf")
        nn.save_net(value_net, out_dir / "value.drwf")
    return TrainResult(policy, value_net, records,
                       (out_dir / "training_log.jsonl") if out_dir else None)
