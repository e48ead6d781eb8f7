"""Behavior and transition discriminators and the rewards they shape.

Two label conventions exist for the behavior discriminator:

* ``geg``: policy samples are the positive class, so expert-like pairs get
  small outputs and the bonus ``-eta * log D`` rewards them.
* ``peg``: expert samples are the positive class and the bonus is
  ``-eta * D_trans * log(1 - D_beh)``, gated by the transition discriminator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from peglab.nn import Adam, Mlp, log_sigmoid, sigmoid

DELTA = 1e-6
HIDDEN = (64, 64, 64)


def one_hot(actions, n_actions: int) -> np.ndarray:
    actions = np.asarray(actions, dtype=np.int64)
    out = np.zeros(actions.shape + (n_actions,))
    np.put_along_axis(out, actions[..., None], 1.0, axis=-1)
    return out


def behavior_features(states, actions, n_actions: int) -> np.ndarray:
    return np.concatenate([np.asarray(states, dtype=np.float64), one_hot(actions, n_actions)], axis=-1)


def transition_features(states, actions, next_states, n_actions: int) -> np.ndarray:
    return np.concatenate(
        [np.asarray(states, dtype=np.float64), one_hot(actions, n_actions), np.asarray(next_states, dtype=np.float64)],
        axis=-1,
    )


@dataclass
class AgentDemos:
    """One agent's personalized demonstrations as flat arrays of raw local states."""

    states: np.ndarray
    actions: np.ndarray
    next_states: np.ndarray
    timesteps: np.ndarray
    n_episodes: int

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.next_states = np.asarray(self.next_states, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.int64)
        self.timesteps = np.asarray(self.timesteps, dtype=np.int64)
        n = len(self.states)
        if n == 0 or self.n_episodes <= 0:
            raise ValueError("demonstrations must contain at least one transition")
        if not (len(self.actions) == len(self.next_states) == len(self.timesteps) == n):
            raise ValueError("demonstration arrays differ in length")
        if self.states.shape != self.next_states.shape:
            raise ValueError("state and next-state dimensions differ")

    @property
    def state_dim(self) -> int:
        return self.states.shape[1]


@dataclass
class DemoSet:
    """Per-agent demonstration arrays for one environment kind."""

    kind: str
    agents: list[AgentDemos]

    def __len__(self) -> int:
        return len(self.agents)

    def __getitem__(self, agent: int) -> AgentDemos:
        return self.agents[agent]

    def check(self, kind: str, n_agents: int, state_dim: int) -> None:
        if self.kind != kind:
            raise ValueError(f"demonstrations were recorded on {self.kind}, experiment runs {kind}")
        if len(self.agents) != n_agents:
            raise ValueError(f"{len(self.agents)} demonstration sets for {n_agents} agents")
        for i, demo in enumerate(self.agents):
            if demo.state_dim != state_dim:
                raise ValueError(f"agent {i} demos have state dimension {demo.state_dim}, expected {state_dim}")


@dataclass
class DiscSchedule:
    epochs: int = 4
    minibatch: int = 64
    # policy tuples drawn from the rollout batch per update; None uses all
    samples: int | None = 1024
    lr: float = 1e-4


class Discriminator:
    """Sigmoid classifier with a fixed positive class and clamped outputs."""

    def __init__(self, input_dim: int, rng: np.random.Generator, *, lr: float = 1e-4, delta: float = DELTA):
        self.net = Mlp([input_dim, *HIDDEN, 1], output="sigmoid", rng=rng)
        self.opt = Adam(self.net.params, lr=lr)
        self.delta = delta

    @property
    def input_dim(self) -> int:
        return self.net.layer_dims[0]

    def predict(self, features) -> np.ndarray:
        out = self.net.forward(np.atleast_2d(features))[:, 0]
        return np.clip(out, self.delta, 1.0 - self.delta)

    def objective(self, positives, negatives) -> float:
        """``E_pos[log D] + E_neg[log(1 - D)]`` with clamped outputs."""
        d_pos = self.predict(positives)
        d_neg = self.predict(negatives)
        return float(np.mean(np.log(d_pos)) + np.mean(np.log(1.0 - d_neg)))

    def loss_and_grads(self, positives, negatives):
        """Negated objective on raw logits and its parameter gradients."""
        x = np.concatenate([positives, negatives], axis=0)
        n_pos, n_neg = len(positives), len(negatives)
        _, cache = self.net.forward_cache(x)
        z = self.net.logits(cache)[:, 0]
        labels = np.concatenate([np.ones(n_pos), np.zeros(n_neg)])
        weights = np.concatenate([np.full(n_pos, 1.0 / n_pos), np.full(n_neg, 1.0 / n_neg)])
        loss = -float(np.sum(weights * (labels * log_sigmoid(z) + (1 - labels) * log_sigmoid(-z))))
        dz = weights * (sigmoid(z) - labels)
        grads, _ = self.net.backward(cache, dz[:, None], preactivation=True)
        return loss, grads

    def ascend(self, positives, negatives) -> None:
        _, grads = self.loss_and_grads(positives, negatives)
        self.opt.step(grads)

    def fit(self, positives, negatives, rng, schedule: DiscSchedule | None = None, *, pool_from: str = "positives") -> float:
        """Run the minibatch schedule and return the post-update objective.

        Epochs run over a pool drawn from the side named by ``pool_from``
        (the policy samples); the other side is resampled with replacement so
        every minibatch is balanced.
        """
        schedule = schedule or DiscSchedule()
        positives = np.asarray(positives, dtype=np.float64)
        negatives = np.asarray(negatives, dtype=np.float64)
        if len(positives) == 0 or len(negatives) == 0:
            raise ValueError("discriminator update needs non-empty policy and expert batches")
        pool, other = (positives, negatives) if pool_from == "positives" else (negatives, positives)
        if schedule.samples is not None and len(pool) > schedule.samples:
            pool = pool[rng.choice(len(pool), schedule.samples, replace=False)]
        mb = schedule.minibatch
        for _ in range(schedule.epochs):
            order = rng.permutation(len(pool))
            for start in range(0, len(pool), mb):
                chunk = pool[order[start : start + mb]]
                partner = other[rng.integers(0, len(other), len(chunk))]
                if pool_from == "positives":
                    self.ascend(chunk, partner)
                else:
                    self.ascend(partner, chunk)
        return self.objective(positives, negatives)


class BehaviorDisc(Discriminator):
    """Classifier over (personal state, one-hot action)."""

    def __init__(self, state_dim: int, n_actions: int, rng, *, convention: str = "peg", lr: float = 1e-4, delta: float = DELTA):
        if convention not in ("geg", "peg"):
            raise ValueError(f"unknown label convention {convention!r}")
        super().__init__(state_dim + n_actions, rng, lr=lr, delta=delta)
        self.convention = convention
        self.n_actions = n_actions

    def features(self, states, actions):
        return behavior_features(states, actions, self.n_actions)

    def __call__(self, states, actions):
        return self.predict(self.features(states, actions))


class TransitionDisc(Discriminator):
    """Classifier over (personal state, one-hot action, next personal state)."""

    def __init__(self, state_dim: int, n_actions: int, rng, *, lr: float = 1e-4, delta: float = DELTA):
        super().__init__(2 * state_dim + n_actions, rng, lr=lr, delta=delta)
        self.n_actions = n_actions

    def features(self, states, actions, next_states):
        return transition_features(states, actions, next_states, self.n_actions)

    def __call__(self, states, actions, next_states):
        return self.predict(self.features(states, actions, next_states))


def update_behavior_geg(disc: BehaviorDisc, policy_feats, expert_feats, rng, schedule: DiscSchedule | None = None) -> float:
    """Ascend ``E_policy[log D] + E_expert[log(1 - D)]``."""
    if disc.convention != "geg":
        raise ValueError("update_behavior_geg needs a geg-convention discriminator")
    return disc.fit(policy_feats, expert_feats, rng, schedule, pool_from="positives")


def update_behavior_peg(disc: BehaviorDisc, policy_feats, expert_feats, rng, schedule: DiscSchedule | None = None) -> float:
    """Ascend ``E_policy[log(1 - D)] + E_expert[log D]``."""
    if disc.convention != "peg":
        raise ValueError("update_behavior_peg needs a peg-convention discriminator")
    return disc.fit(expert_feats, policy_feats, rng, schedule, pool_from="negatives")


def update_transition(disc: TransitionDisc, policy_feats, expert_feats, rng, schedule: DiscSchedule | None = None) -> float:
    """Ascend ``E_policy[log(1 - D)] + E_expert[log D]`` on (s, a, s') tuples."""
    return disc.fit(expert_feats, policy_feats, rng, schedule, pool_from="negatives")


def reshape_geg(r, d, eta):
    return np.asarray(r, dtype=np.float64) - eta * np.log(d)


def reshape_peg(r, d_beh, d_trans, eta):
    return np.asarray(r, dtype=np.float64) - eta * np.asarray(d_trans) * np.log1p(-np.asarray(d_beh))
