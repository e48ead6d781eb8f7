"""PPO pieces: advantage estimation, clipped surrogate, value loss, updates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from peglab.nn import Adam, Mlp, categorical_entropy, clip_grad_norm, entropy_grad, log_softmax


@dataclass
class PpoConfig:
    epochs: int = 4
    buffer_size: int = 4096
    clip: float = 0.2
    lr: float = 1e-4
    gamma: float = 0.99
    gae_lambda: float = 0.95
    entropy_coef: float = 0.01
    minibatch: int = 256
    max_grad_norm: float | None = 0.5

    def __post_init__(self):
        if not 0.0 < self.clip < 1.0:
            raise ValueError(f"clip must lie in (0, 1), got {self.clip}")
        if not 0.0 <= self.gae_lambda <= 1.0:
            raise ValueError(f"gae_lambda must lie in [0, 1], got {self.gae_lambda}")
        if self.epochs < 1 or self.buffer_size < 1 or self.minibatch < 1:
            raise ValueError("epochs, buffer_size and minibatch must be positive")


class NumericError(RuntimeError):
    """Raised when a loss or metric turns non-finite."""


# -- advantages -------------------------------------------------------------


def compute_gae(rewards, values, bootstrap: float = 0.0, gamma: float = 0.99, lam: float = 0.95):
    """GAE for one trajectory.

    ``bootstrap`` is the value of the state after the last step: 0 when the
    episode terminated, ``V(s_T)`` when it was truncated.
    Returns ``(advantages, targets)``.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if rewards.shape != values.shape:
        raise ValueError("rewards and values must have equal length")
    adv = np.zeros_like(rewards)
    next_value, running = bootstrap, 0.0
    for t in range(len(rewards) - 1, -1, -1):
        delta = rewards[t] + gamma * next_value - values[t]
        running = delta + gamma * lam * running
        adv[t] = running
        next_value = values[t]
    return adv, adv + values


def compute_gae_batched(rewards, values, next_values, terminated, episode_end, gamma: float, lam: float):
    """GAE over time-major arrays ``(T, ...)`` holding many interleaved episodes.

    ``next_values`` is ``V(s_{t+1})`` for every step (used only where the
    episode continues or was truncated); ``episode_end`` cuts the recursion.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    adv = np.zeros_like(rewards)
    running = np.zeros(rewards.shape[1:])
    for t in range(len(rewards) - 1, -1, -1):
        nv = np.where(terminated[t], 0.0, next_values[t])
        delta = rewards[t] + gamma * nv - values[t]
        running = delta + gamma * lam * np.where(episode_end[t], 0.0, running)
        adv[t] = running
    return adv, adv + values


def normalize_advantages(adv) -> np.ndarray:
    adv = np.asarray(adv, dtype=np.float64)
    std = adv.std()
    return (adv - adv.mean()) / (std + 1e-8)


# -- losses on network outputs ----------------------------------------------


def surrogate_loss(logits, actions, old_logp, adv, clip: float, entropy_coef: float):
    """Clipped surrogate minus entropy bonus, and its gradient w.r.t. logits."""
    logits = np.asarray(logits, dtype=np.float64)
    n = len(logits)
    logp_all = log_softmax(logits)
    logp = np.take_along_axis(logp_all, np.asarray(actions)[:, None], axis=1)[:, 0]
    ratio = np.exp(logp - old_logp)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1.0 - clip, 1.0 + clip) * adv
    entropy = categorical_entropy(logits)
    loss = -np.mean(np.minimum(unclipped, clipped)) - entropy_coef * np.mean(entropy)
    # the min picks the unclipped term, or a clipped term with zero gradient
    live = unclipped <= clipped
    d_logp = np.where(live, -adv * ratio, 0.0) / n
    onehot = np.zeros_like(logits)
    onehot[np.arange(n), actions] = 1.0
    grad = d_logp[:, None] * (onehot - np.exp(logp_all)) - entropy_coef * entropy_grad(logits) / n
    stats = {
        "entropy": float(np.mean(entropy)),
        "clip_frac": float(np.mean(np.abs(ratio - 1.0) > clip)),
        "approx_kl": float(np.mean(old_logp - logp)),
    }
    return float(loss), grad, stats


def value_loss(values, targets):
    """Mean squared error and its gradient w.r.t. the predictions."""
    values = np.asarray(values, dtype=np.float64)
    diff = values - np.asarray(targets, dtype=np.float64).reshape(values.shape)
    return float(np.mean(diff**2)), 2.0 * diff / diff.size


# -- updates ----------------------------------------------------------------


def _apply(net: Mlp, opt: Adam, cache, out_grad, max_norm):
    grads, _ = net.backward(cache, out_grad)
    clip_grad_norm(grads, max_norm)
    opt.step(grads)


def ppo_update(learner, actor_x, critic_x, actions, old_logp, adv, targets, cfg: PpoConfig, rng) -> dict:
    """Epochs of shuffled minibatch steps on actor and critic.

    Advantages are normalized once over the whole update batch.
    """
    n = len(actions)
    adv = normalize_advantages(adv)
    totals = {"actor_loss": 0.0, "critic_loss": 0.0, "entropy": 0.0}
    count = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.minibatch):
            idx = order[start : start + cfg.minibatch]
            logits, a_cache = learner.actor.forward_cache(actor_x[idx])
            a_loss, d_logits, stats = surrogate_loss(
                logits, actions[idx], old_logp[idx], adv[idx], cfg.clip, cfg.entropy_coef
            )
            v, c_cache = learner.critic.forward_cache(critic_x[idx])
            c_loss, d_v = value_loss(v, targets[idx])
            if not (np.isfinite(a_loss) and np.isfinite(c_loss)):
                raise NumericError(f"non-finite loss (actor={a_loss}, critic={c_loss}) at minibatch {count}")
            _apply(learner.actor, learner.actor_opt, a_cache, d_logits, cfg.max_grad_norm)
            _apply(learner.critic, learner.critic_opt, c_cache, d_v, cfg.max_grad_norm)
            totals["actor_loss"] += a_loss
            totals["critic_loss"] += c_loss
            totals["entropy"] += stats["entropy"]
            count += 1
    return {k: v / count for k, v in totals.items()}
