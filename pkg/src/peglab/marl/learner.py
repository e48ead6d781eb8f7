"""Per-agent learners and the critic-consensus communication graph."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from peglab.discriminators import BehaviorDisc, TransitionDisc
from peglab.nn import Adam, Mlp

HIDDEN = (64, 64)


@dataclass
class AgentLearner:
    actor: Mlp
    critic: Mlp
    actor_opt: Adam
    critic_opt: Adam
    behavior: BehaviorDisc | None = None
    transition: TransitionDisc | None = None

    @classmethod
    def build(cls, actor_dim: int, critic_dim: int, n_actions: int, rng, lr: float = 1e-4) -> "AgentLearner":
        # small output gain keeps the initial policy close to uniform
        actor = Mlp([actor_dim, *HIDDEN, n_actions], rng=rng, output_gain=0.01)
        critic = Mlp([critic_dim, *HIDDEN, 1], rng=rng)
        return cls(actor, critic, Adam(actor.params, lr=lr), Adam(critic.params, lr=lr))

    def values(self, critic_x) -> np.ndarray:
        return self.critic.forward(critic_x)[..., 0]

    def networks(self, prefix: str = "") -> dict[str, Mlp]:
        nets = {f"{prefix}actor": self.actor, f"{prefix}critic": self.critic}
        if self.behavior is not None:
            nets[f"{prefix}behavior"] = self.behavior.net
        if self.transition is not None:
            nets[f"{prefix}transition"] = self.transition.net
        return nets


@dataclass
class CommGraph:
    """Undirected graph over agents; neighbor lists include the agent itself by default."""

    n: int
    edges: frozenset = field(default_factory=frozenset)
    self_loops: bool = True

    def __post_init__(self):
        norm = set()
        for i, j in self.edges:
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ValueError(f"edge ({i}, {j}) outside {self.n} nodes")
            norm.add((min(i, j), max(i, j)))
        self.edges = frozenset(norm)

    @classmethod
    def complete(cls, n: int, self_loops: bool = True) -> "CommGraph":
        return cls(n, frozenset((i, j) for i in range(n) for j in range(i + 1, n)), self_loops)

    @classmethod
    def ring(cls, n: int, self_loops: bool = True) -> "CommGraph":
        return cls(n, frozenset((i, (i + 1) % n) for i in range(n) if n > 1), self_loops)

    @classmethod
    def identity(cls, n: int) -> "CommGraph":
        return cls(n, frozenset(), True)

    @classmethod
    def from_name(cls, name: str, n: int) -> "CommGraph":
        try:
            return {"complete": cls.complete, "ring": cls.ring, "identity": lambda k: cls.identity(k)}[name](n)
        except KeyError:
            raise ValueError(f"unknown graph {name!r}") from None

    def neighbors(self, i: int) -> list[int]:
        out = {i} if self.self_loops else set()
        for a, b in self.edges:
            if a == i:
                out.add(b)
            elif b == i:
                out.add(a)
        return sorted(out)

    def averaging_matrix(self) -> np.ndarray:
        w = np.zeros((self.n, self.n))
        for i in range(self.n):
            nb = self.neighbors(i)
            if not nb:
                raise ValueError(f"agent {i} has no neighbors")
            w[i, nb] = 1.0 / len(nb)
        return w


def neighbor_average_critics(learners, graph: CommGraph, scheme: str = "jacobi") -> None:
    """Replace each critic by the mean of its neighbors' critics.

    ``jacobi`` averages a snapshot taken before any update; ``gauss_seidel``
    lets later agents see parameters already averaged this round.
    """
    if graph.n != len(learners):
        raise ValueError(f"graph has {graph.n} nodes for {len(learners)} learners")
    if scheme not in ("jacobi", "gauss_seidel"):
        raise ValueError(f"unknown averaging scheme {scheme!r}")
    snapshot = [[p.copy() for p in lr.critic.params] for lr in learners]
    for i, learner in enumerate(learners):
        nb = graph.neighbors(i)
        if not nb:
            raise ValueError(f"agent {i} has no neighbors")
        source = snapshot if scheme == "jacobi" else [lr.critic.params for lr in learners]
        new = [sum(source[j][k] for j in nb) / len(nb) for k in range(len(learner.critic.params))]
        learner.critic.set_params(new)


def average_reshaped_rewards(per_agent) -> np.ndarray:
    """Elementwise mean over agents; input is a sequence of equal-length arrays."""
    arrays = [np.asarray(r, dtype=np.float64) for r in per_agent]
    if not arrays:
        raise ValueError("no reward sequences given")
    if any(a.shape != arrays[0].shape for a in arrays):
        raise ValueError("reward sequences differ in length")
    return np.mean(arrays, axis=0)
