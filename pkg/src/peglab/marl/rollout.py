"""Vectorized rollout collection into time-major arrays."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from peglab.core import RUNNING, TERMINATED, TRUNCATED, RolloutBatch, Trajectory, Transition, as_global_state
from peglab.envs.base import MultiAgentEnv
from peglab.nn import categorical_logprob, categorical_sample


@dataclass
class Rollout:
    """Time-major arrays ``(T, K, ...)`` for ``K`` environment copies.

    Only entries with ``valid`` set belong to the batch; a copy stops
    contributing after the episode during which the buffer filled up, so every
    recorded episode is complete.
    """

    obs: np.ndarray  # (T, K, N, d)
    next_obs: np.ndarray  # (T, K, N, d)
    actions: np.ndarray  # (T, K, N)
    log_probs: np.ndarray  # (T, K, N)
    values: np.ndarray  # (T, K, N)
    rewards: np.ndarray  # (T, K)
    terminated: np.ndarray  # (T, K)
    truncated: np.ndarray  # (T, K)
    success: np.ndarray  # (T, K)
    timesteps: np.ndarray  # (T, K)
    valid: np.ndarray  # (T, K)

    @property
    def env_steps(self) -> int:
        return int(self.valid.sum())

    @property
    def n_agents(self) -> int:
        return self.actions.shape[2]

    def episode_end(self) -> np.ndarray:
        return self.terminated | self.truncated

    def episode_returns(self) -> tuple[np.ndarray, np.ndarray]:
        """Undiscounted env return and success flag of each complete episode."""
        returns, successes = [], []
        for k in range(self.rewards.shape[1]):
            total = 0.0
            for t in np.flatnonzero(self.valid[:, k]):
                total += self.rewards[t, k]
                if self.terminated[t, k] or self.truncated[t, k]:
                    returns.append(total)
                    successes.append(bool(self.success[t, k]))
                    total = 0.0
        return np.array(returns), np.array(successes, dtype=bool)

    def n_episodes(self) -> int:
        return int((self.episode_end() & self.valid).sum())

    def to_batch(self) -> RolloutBatch:
        """Object form (per-episode lists of ``Transition``) of the valid entries."""
        trajectories = []
        for k in range(self.rewards.shape[1]):
            current: list[Transition] = []
            for t in np.flatnonzero(self.valid[:, k]):
                done = TERMINATED if self.terminated[t, k] else TRUNCATED if self.truncated[t, k] else RUNNING
                current.append(
                    Transition(
                        as_global_state(self.obs[t, k]),
                        tuple(int(a) for a in self.actions[t, k]),
                        float(self.rewards[t, k]),
                        as_global_state(self.next_obs[t, k]),
                        done,
                        tuple(float(lp) for lp in self.log_probs[t, k]),
                    )
                )
                if done != RUNNING:
                    trajectories.append(Trajectory(current))
                    current = []
        return RolloutBatch(trajectories)


def policy_actions(env: MultiAgentEnv, learners, obs, rng=None, greedy: bool = False):
    """Joint actions and their log-probabilities for a batch of observations."""
    x = env.actor_inputs(obs)
    k, n = obs.shape[0], env.n_agents
    actions = np.zeros((k, n), dtype=np.int64)
    logp = np.zeros((k, n))
    for i, learner in enumerate(learners):
        logits = learner.actor.forward(x[:, i])
        if greedy:
            actions[:, i] = np.argmax(logits, axis=-1)
        else:
            actions[:, i] = categorical_sample(logits, rng)
        logp[:, i] = categorical_logprob(logits, actions[:, i])
    return actions, logp


def collect_rollouts(env: MultiAgentEnv, learners, buffer_size: int, rng) -> Rollout:
    """Run the copies of ``env`` until at least ``buffer_size`` valid steps exist.

    Finished copies are reset immediately; once the target is reached, copies
    that finish an episode retire and only in-flight episodes are completed.
    """
    if len(learners) != env.n_agents:
        raise ValueError(f"{len(learners)} learners for {env.n_agents} agents")
    k = env.num_envs
    obs = env.reset()
    active = np.ones(k, dtype=bool)
    collected = 0
    rows: dict[str, list] = {name: [] for name in Rollout.__dataclass_fields__}
    while active.any():
        actions, logp = policy_actions(env, learners, obs, rng)
        cx = env.critic_inputs(obs)
        values = np.stack([lr.values(cx) for lr in learners], axis=1)
        timesteps = env.steps.copy()
        next_obs, reward, term, trunc, info = env.step(actions)
        for name, value in (
            ("obs", obs), ("next_obs", next_obs), ("actions", actions), ("log_probs", logp),
            ("values", values), ("rewards", reward), ("terminated", term), ("truncated", trunc),
            ("success", info["success"]), ("timesteps", timesteps), ("valid", active.copy()),
        ):
            rows[name].append(value)
        collected += int(active.sum())
        ended = term | trunc
        active &= ~(ended & (collected >= buffer_size))
        obs = env.reset(ended) if ended.any() else next_obs
    return Rollout(**{name: np.stack(v) for name, v in rows.items()})


def evaluate(env: MultiAgentEnv, learners, episodes: int, rng=None, greedy: bool = True) -> dict:
    """Run exactly ``episodes`` episodes, one per copy, and summarize them.

    ``env.num_envs`` must equal ``episodes``.
    """
    if env.num_envs != episodes:
        raise ValueError(f"evaluation env has {env.num_envs} copies for {episodes} episodes")
    obs = env.reset()
    returns = np.zeros(episodes)
    success = np.zeros(episodes, dtype=bool)
    lengths = np.zeros(episodes, dtype=np.int64)
    running = np.ones(episodes, dtype=bool)
    while running.any():
        actions, _ = policy_actions(env, learners, obs, rng, greedy=greedy)
        obs, reward, term, trunc, info = env.step(actions)
        returns += np.where(running, reward, 0.0)
        lengths += running
        success |= running & info["success"]
        ended = (term | trunc) & running
        running &= ~ended
        if (term | trunc).any():
            obs = env.reset(term | trunc)
    return {
        "mean_reward": float(returns.mean()),
        "std_reward": float(returns.std()),
        "success_rate": float(success.mean()),
        "mean_length": float(lengths.mean()),
        "returns": returns,
    }
