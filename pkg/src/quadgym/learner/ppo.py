"""Diagonal-Gaussian actor-critic and the clipped-surrogate update.

The learning rate adapts to the measured KL divergence: it shrinks by 1.5x
whenever a minibatch KL exceeds twice the target and grows by 1.5x when it
falls below half the target, clamped to configured bounds.
"""

import dataclasses
import math

import numpy as np

from ..config import PpoConfig
from .mlp import (
    AdamState,
    MlpParams,
    adam_step,
    clip_grad_norm,
    init_mlp,
    mlp_backward,
    mlp_forward,
    mlp_forward_cache,
)

__all__ = [
    "PolicyParams", "RolloutBuffer", "UpdateStats", "init_policy",
    "policy_act", "policy_sample", "gaussian_log_prob", "gaussian_entropy",
    "gaussian_kl", "compute_gae", "surrogate_gradients", "ppo_update",
]

_LOG_2PI = math.log(2.0 * math.pi)


@dataclasses.dataclass
class PolicyParams:
    """Actor (action mean), per-action log standard deviation, and critic."""

    actor: MlpParams
    log_std: np.ndarray
    critic: MlpParams

    def __post_init__(self):
        if self.actor.sizes[1:-1] != self.critic.sizes[1:-1]:
            raise ValueError("actor and critic must share hidden widths")
        if self.log_std.shape != (self.actor.sizes[-1],):
            raise ValueError("log_std must have one entry per action")
        if self.critic.sizes[-1] != 1:
            raise ValueError("critic must output a single value")

    @property
    def obs_dim(self) -> int:
        return self.actor.sizes[0]

    @property
    def act_dim(self) -> int:
        return self.actor.sizes[-1]

    def param_list(self) -> list:
        return self.actor.param_list() + [self.log_std] + self.critic.param_list()

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.actor.copy(), self.log_std.copy(),
                            self.critic.copy())


def init_policy(obs_dim: int, act_dim: int, rng,
                cfg: PpoConfig | None = None) -> PolicyParams:
    cfg = cfg or PpoConfig()
    sizes = [obs_dim, *cfg.hidden_sizes]
    actor = init_mlp(sizes + [act_dim], rng, out_gain=0.01)
    critic = init_mlp(sizes + [1], rng, out_gain=1.0)
    log_std = np.full(act_dim, float(cfg.init_log_std))
    return PolicyParams(actor, log_std, critic)


def gaussian_log_prob(mean: np.ndarray, log_std: np.ndarray,
                      action: np.ndarray) -> np.ndarray:
    """Diagonal-Gaussian log density; batched over leading axes."""
    z = (action - mean) / np.exp(log_std)
    d = mean.shape[-1]
    return (-0.5 * np.sum(z * z, axis=-1) - np.sum(log_std)
            - 0.5 * d * _LOG_2PI)


def gaussian_entropy(log_std: np.ndarray) -> float:
    d = log_std.shape[0]
    return float(np.sum(log_std) + 0.5 * d * (1.0 + _LOG_2PI))


def gaussian_kl(mean_old, log_std_old, mean_new, log_std_new) -> np.ndarray:
    """KL(old || new) per sample for diagonal Gaussians."""
    var_old = np.exp(2.0 * log_std_old)
    var_new = np.exp(2.0 * log_std_new)
    dm = mean_new - mean_old
    return np.sum(log_std_new - log_std_old
                  + (var_old + dm * dm) / (2.0 * var_new) - 0.5, axis=-1)


def policy_sample(pp: PolicyParams, obs: np.ndarray, rng):
    """Sample action ~ N(actor(obs), diag std); returns (action, log_prob)."""
    mean = mlp_forward(pp.actor, obs)
    noise = rng.standard_normal(mean.shape)
    action = mean + np.exp(pp.log_std) * noise
    return action, gaussian_log_prob(mean, pp.log_std, action)


def policy_act(pp: PolicyParams, obs: np.ndarray, rng):
    """Sampling plus the bookkeeping a rollout needs: (action, log_prob, mean, value)."""
    mean = mlp_forward(pp.actor, obs)
    noise = rng.standard_normal(mean.shape)
    action = mean + np.exp(pp.log_std) * noise
    logp = gaussian_log_prob(mean, pp.log_std, action)
    value = mlp_forward(pp.critic, obs)[..., 0]
    return action, logp, mean, value


# ---------------------------------------------------------------------------
# rollout storage and advantage estimation
# ---------------------------------------------------------------------------


class RolloutBuffer:
    """N envs x T steps of on-policy transitions, filled once per iteration.

    `next_value` carries the bootstrap: V(s_{t+1}) for ordinary steps, the
    terminal observation's value for time-out truncation, and 0 for true
    terminations.
    """

    def __init__(self, n_envs: int, horizon: int, obs_dim: int, act_dim: int):
        if n_envs < 1 or horizon < 1:
            raise ValueError("n_envs and horizon must be positive")
        self.n_envs = n_envs
        self.horizon = horizon
        self.obs = np.zeros((horizon, n_envs, obs_dim))
        self.actions = np.zeros((horizon, n_envs, act_dim))
        self.means = np.zeros((horizon, n_envs, act_dim))
        self.log_probs = np.zeros((horizon, n_envs))
        self.rewards = np.zeros((horizon, n_envs))
        self.values = np.zeros((horizon, n_envs))
        self.dones = np.zeros((horizon, n_envs), dtype=bool)
        self.next_values = np.zeros((horizon, n_envs))
        self.advantages = np.zeros((horizon, n_envs))
        self.returns = np.zeros((horizon, n_envs))
        self.step = 0

    @property
    def full(self) -> bool:
        return self.step == self.horizon

    @property
    def size(self) -> int:
        return self.horizon * self.n_envs

    def reset(self) -> None:
        self.step = 0

    def add(self, obs, action, log_prob, reward, value, done, next_value,
            mean=None) -> None:
        if self.full:
            raise ValueError("rollout buffer is full")
        t = self.step
        self.obs[t] = obs
        self.actions[t] = action
        self.log_probs[t] = log_prob
        self.rewards[t] = reward
        self.values[t] = value
        self.dones[t] = done
        self.next_values[t] = next_value
        self.means[t] = mean if mean is not None else action
        self.step = t + 1


def compute_gae(buffer: RolloutBuffer, gamma: float, lam: float):
    """Generalized advantage estimates and returns, stored on the buffer.

    delta_t = r_t + gamma * next_value_t - V(s_t)
    A_t     = delta_t + gamma * lam * (1 - done_t) * A_{t+1}
    returns = A + V
    """
    if not buffer.full:
        raise ValueError("buffer must be full before computing advantages")
    if not (0.0 < gamma <= 1.0 and 0.0 < lam <= 1.0):
        raise ValueError("gamma and lam must lie in (0, 1]")
    deltas = (buffer.rewards + gamma * buffer.next_values - buffer.values)
    carry = np.zeros(buffer.n_envs)
    for t in range(buffer.horizon - 1, -1, -1):
        carry = deltas[t] + gamma * lam * (~buffer.dones[t]) * carry
        buffer.advantages[t] = carry
    buffer.returns = buffer.advantages + buffer.values
    return buffer.advantages, buffer.returns


# ---------------------------------------------------------------------------
# the update
# ---------------------------------------------------------------------------


@dataclasses.dataclass
class UpdateStats:
    mean_kl: float
    lr: float
    actor_loss: float
    value_loss: float
    entropy: float
    clip_fraction: float
    diverged: bool = False


def surrogate_gradients(pp: PolicyParams, obs, actions, old_log_probs,
                        advantages, clip_ratio: float, entropy_coef: float):
    """Gradients of the clipped-surrogate actor loss for one minibatch.

    Loss = -mean(min(rho*A, clip(rho, 1-eps, 1+eps)*A)) - entropy_coef * H.
    Returns (actor MlpGrads, d_log_std, info dict).
    """
    m = obs.shape[0]
    mean, cache = mlp_forward_cache(pp.actor, obs)
    std = np.exp(pp.log_std)
    z = (actions - mean) / std
    logp = -0.5 * np.sum(z * z, axis=-1) - np.sum(pp.log_std) \
        - 0.5 * mean.shape[-1] * _LOG_2PI
    rho = np.exp(logp - old_log_probs)
    clipped = np.clip(rho, 1.0 - clip_ratio, 1.0 + clip_ratio)
    surr = np.minimum(rho * advantages, clipped * advantages)
    unclipped = surr == rho * advantages
    # d(-mean surr)/d logp: only where the unclipped branch is active
    g_logp = np.where(unclipped, -advantages * rho / m, 0.0)
    # d logp / d mean = (a - mean) / std^2
    g_mean = g_logp[:, None] * (z / std)
    grads = mlp_backward(pp.actor, cache, g_mean)
    # d logp / d log_std = z^2 - 1; entropy contributes -coef per dim
    d_log_std = np.sum(g_logp[:, None] * (z * z - 1.0), axis=0) - entropy_coef
    info = {
        "surrogate": float(np.mean(surr)),
        "entropy": gaussian_entropy(pp.log_std),
        "clip_fraction": float(np.mean(~unclipped)),
        "mean": mean,
    }
    return grads, d_log_std, info


def _value_gradients(pp: PolicyParams, obs, returns, coef: float):
    m = obs.shape[0]
    v, cache = mlp_forward_cache(pp.critic, obs)
    err = v[:, 0] - returns
    loss = 0.5 * coef * float(np.mean(err * err))
    grads = mlp_backward(pp.critic, cache, (coef * err / m)[:, None])
    return grads, loss


def ppo_update(pp: PolicyParams, buffer: RolloutBuffer, cfg: PpoConfig, rng,
               opt: AdamState | None = None, lr: float | None = None):
    """Multi-epoch minibatched PPO step, mutating `pp` in place.

    Returns (pp, UpdateStats, opt). On a non-finite loss or gradient the
    update aborts: parameters and optimizer state roll back to their values
    on entry and the stats carry diverged=True.
    """
    if not buffer.full:
        raise ValueError("buffer must be full before updating")
    if buffer.size % cfg.num_minibatches != 0:
        raise ValueError(
            f"minibatch count {cfg.num_minibatches} must divide {buffer.size}")
    if opt is None:
        opt = AdamState.like(pp.param_list())
    lr = float(cfg.lr_init if lr is None else lr)
    lr = min(max(lr, cfg.lr_min), cfg.lr_max)

    flat = buffer.size
    obs = buffer.obs.reshape(flat, -1)
    actions = buffer.actions.reshape(flat, -1)
    old_means = buffer.means.reshape(flat, -1)
    old_logp = buffer.log_probs.reshape(flat)
    adv = buffer.advantages.reshape(flat).copy()
    returns = buffer.returns.reshape(flat)
    if not (np.isfinite(adv).all() and np.isfinite(returns).all()
            and np.isfinite(obs).all()):
        return pp, UpdateStats(
            mean_kl=float("nan"), lr=lr, actor_loss=float("nan"),
            value_loss=float("nan"), entropy=gaussian_entropy(pp.log_std),
            clip_fraction=0.0, diverged=True), opt
    adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    old_log_std = pp.log_std.copy()

    snapshot = pp.copy()
    opt_snapshot = AdamState([m.copy() for m in opt.m],
                             [v.copy() for v in opt.v], opt.t)
    mb_size = flat // cfg.num_minibatches
    # log_std takes raw SGD steps: its gradient carries the constant entropy
    # bonus, which Adam's per-coordinate normalization would turn into a
    # steady upward drift of the exploration noise
    log_std_index = (len(pp.actor.param_list()),)
    kls, actor_losses, value_losses, entropies, clip_fracs = [], [], [], [], []

    for _ in range(cfg.epochs):
        order = rng.permutation(flat)
        for k in range(cfg.num_minibatches):
            idx = order[k * mb_size:(k + 1) * mb_size]
            a_grads, d_log_std, info = surrogate_gradients(
                pp, obs[idx], actions[idx], old_logp[idx], adv[idx],
                cfg.clip_ratio, cfg.entropy_coef)
            c_grads, v_loss = _value_gradients(pp, obs[idx], returns[idx],
                                               cfg.value_loss_coef)
            kl = float(np.mean(gaussian_kl(old_means[idx], old_log_std,
                                           info["mean"], pp.log_std)))
            actor_loss = -info["surrogate"] - cfg.entropy_coef * info["entropy"]

            if cfg.desired_kl > 0.0:
                if kl > 2.0 * cfg.desired_kl:
                    lr = max(cfg.lr_min, lr / 1.5)
                elif 0.0 <= kl < cfg.desired_kl / 2.0:
                    lr = min(cfg.lr_max, lr * 1.5)

            grad_list = (a_grads.param_list() + [d_log_std]
                         + c_grads.param_list())
            finite = (math.isfinite(actor_loss) and math.isfinite(v_loss)
                      and math.isfinite(kl)
                      and all(np.isfinite(g).all() for g in grad_list))
            if not finite:
                pp.actor = snapshot.actor
                pp.critic = snapshot.critic
                pp.log_std = snapshot.log_std
                opt.m, opt.v, opt.t = opt_snapshot.m, opt_snapshot.v, opt_snapshot.t
                return pp, UpdateStats(
                    mean_kl=float("nan"), lr=lr, actor_loss=float("nan"),
                    value_loss=float("nan"), entropy=gaussian_entropy(pp.log_std),
                    clip_fraction=0.0, diverged=True), opt

            clip_grad_norm(grad_list, cfg.max_grad_norm)
            adam_step(pp.param_list(), grad_list, opt, lr,
                      sgd_indices=log_std_index)

            kls.append(kl)
            actor_losses.append(actor_loss)
            value_losses.append(v_loss)
            entropies.append(info["entropy"])
            clip_fracs.append(info["clip_fraction"])

    stats = UpdateStats(
        mean_kl=float(np.mean(kls)),
        lr=lr,
        actor_loss=float(np.mean(actor_losses)),
        value_loss=float(np.mean(value_losses)),
        entropy=float(np.mean(entropies)),
        clip_fraction=float(np.mean(clip_fracs)),
    )
    return pp, stats, opt
