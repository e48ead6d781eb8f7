"""Environment spec and the batched multi-agent interface shared by all envs."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

GRID_KINDS = ("lava2", "lava3", "lava4", "door_easy", "door_hard")
ALL_KINDS = GRID_KINDS + ("coop_nav",)
AGENT_COUNTS = {"lava2": 2, "lava3": 3, "lava4": 4, "door_easy": 2, "door_hard": 2, "coop_nav": 2}
DEFAULT_MAX_STEP = {"lava2": 100, "lava3": 100, "lava4": 100, "door_easy": 100, "door_hard": 100, "coop_nav": 50}


@dataclass(frozen=True)
class EnvSpec:
    kind: str
    n_agents: int
    max_step: int
    gamma: float = 0.99
    collision_penalty: float = 1.0
    success_base: float = 10.0
    success_formula: str = "literal"
    # set when the spec describes the personalized MDP of one agent
    permdp_agent: int | None = None

    def __post_init__(self):
        if self.kind not in ALL_KINDS:
            raise ValueError(f"unknown environment kind {self.kind!r}")
        expected = 1 if self.permdp_agent is not None else AGENT_COUNTS[self.kind]
        if self.n_agents != expected:
            raise ValueError(f"{self.kind} expects {expected} agents, got {self.n_agents}")
        if self.success_formula not in ("literal", "scaled"):
            raise ValueError(f"unknown success formula {self.success_formula!r}")

    @classmethod
    def for_kind(cls, kind: str, **overrides) -> "EnvSpec":
        if kind not in ALL_KINDS:
            raise ValueError(f"unknown environment kind {kind!r}")
        base = cls(kind=kind, n_agents=AGENT_COUNTS[kind], max_step=DEFAULT_MAX_STEP[kind])
        return replace(base, **overrides)

    @property
    def is_grid(self) -> bool:
        return self.kind in GRID_KINDS

    def success_reward(self) -> Callable[[np.ndarray], np.ndarray]:
        """Terminal success reward as a function of the step count."""
        base, max_step = self.success_base, float(self.max_step)
        if self.success_formula == "literal":
            return lambda steps: base - steps / max_step
        return lambda steps: base * (1.0 - steps / max_step)


class MultiAgentEnv:
    """Batched environment holding ``num_envs`` independent copies.

    Observations are arrays of shape ``(num_envs, n_agents, obs_dim)`` holding
    each agent's raw local state. ``step`` returns
    ``(obs, reward, terminated, truncated, info)`` with per-copy arrays; a copy
    that finished must be ``reset`` (with a mask) before stepping it again.
    """

    spec: EnvSpec
    num_envs: int
    n_actions: int = 5
    discrete_states: bool = True

    @property
    def n_agents(self) -> int:
        return self.spec.n_agents

    # -- dimensions --------------------------------------------------------
    @property
    def local_dim(self) -> int:
        raise NotImplementedError

    @property
    def actor_dim(self) -> int:
        raise NotImplementedError

    @property
    def critic_dim(self) -> int:
        raise NotImplementedError

    # -- dynamics ----------------------------------------------------------
    def reset(self, mask: np.ndarray | None = None) -> np.ndarray:
        raise NotImplementedError

    def step(self, actions: np.ndarray):
        raise NotImplementedError

    def observe(self) -> np.ndarray:
        raise NotImplementedError

    # -- network encodings -------------------------------------------------
    def personal_obs(self, obs: np.ndarray) -> np.ndarray:
        """Project joint observations onto each agent's personalized view."""
        return obs

    def normalize_personal(self, local: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def actor_inputs(self, obs: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def critic_inputs(self, obs: np.ndarray) -> np.ndarray:
        raise NotImplementedError
