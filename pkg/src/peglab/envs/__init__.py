"""Evaluation environments and their personalized single-agent variants."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from peglab.core import GlobalState, as_global_state
from peglab.envs.base import ALL_KINDS, GRID_KINDS, EnvSpec, MultiAgentEnv
from peglab.envs.coopnav import CoopNav, coop_nav_reward
from peglab.envs.grid import ACTION_NAMES, GridMap, GridWorld, load_map, parse_map

__all__ = [
    "ACTION_NAMES",
    "ALL_KINDS",
    "GRID_KINDS",
    "CoopNav",
    "EnvSpec",
    "GridMap",
    "GridWorld",
    "MultiAgentEnv",
    "coop_nav_reward",
    "derive_permdp",
    "load_map",
    "make_env",
    "parse_map",
    "project_observation",
    "reset",
    "step",
]


def make_env(kind_or_spec: str | EnvSpec, num_envs: int = 1, *, grid: GridMap | None = None, **overrides) -> MultiAgentEnv:
    spec = kind_or_spec if isinstance(kind_or_spec, EnvSpec) else EnvSpec.for_kind(kind_or_spec, **overrides)
    if spec.permdp_agent is not None:
        return derive_permdp(replace(spec, permdp_agent=None, n_agents=_joint_count(spec)), spec.permdp_agent, num_envs, grid=grid)
    if spec.kind == "coop_nav":
        return CoopNav(spec, num_envs)
    grid = grid or load_map(spec.kind)
    if spec.kind.startswith("lava"):
        return GridWorld(spec, grid, num_envs, freeze_at_goal=True)
    # door: only the red agent (0) has to reach its goal
    return GridWorld(spec, grid, num_envs, success_agents=(0,))


def _joint_count(spec: EnvSpec) -> int:
    from peglab.envs.base import AGENT_COUNTS

    return AGENT_COUNTS[spec.kind]


def derive_permdp(spec: EnvSpec | str, agent: int, num_envs: int = 1, *, grid: GridMap | None = None) -> MultiAgentEnv:
    """Single-agent personalized MDP for ``agent`` on the same map.

    All other agents are removed. In the door scenarios the red agent's door
    is permanently open and the green agent's task ends on the trigger cell.
    """
    if isinstance(spec, str):
        spec = EnvSpec.for_kind(spec)
    if not 0 <= agent < spec.n_agents:
        raise IndexError(f"agent {agent} out of range for {spec.kind}")
    single = replace(spec, n_agents=1, permdp_agent=agent)
    if spec.kind == "coop_nav":
        from peglab.envs.coopnav import SPAWNS

        return CoopNav(single, num_envs, spawns=SPAWNS[agent : agent + 1])
    grid = (grid or load_map(spec.kind)).restricted_to(agent)
    door_open = spec.kind.startswith("door") and agent == 0
    return GridWorld(single, grid, num_envs, door_always_open=door_open)


def project_observation(env: MultiAgentEnv, joint_obs, agent: int) -> np.ndarray:
    """Agent ``agent``'s observation restricted to what its PerMDP can see.

    ``joint_obs`` is one copy's observation array of shape ``(n_agents, dim)``.
    """
    joint_obs = np.asarray(joint_obs, dtype=np.float64)
    return env.personal_obs(joint_obs[agent])


def reset(env: MultiAgentEnv) -> GlobalState:
    """Reset a single-copy environment and return its global state."""
    if env.num_envs != 1:
        raise ValueError("reset() helper expects a single-copy environment")
    return as_global_state(env.reset()[0])


def step(env: MultiAgentEnv, joint_action) -> tuple[GlobalState, float, bool, dict]:
    if env.num_envs != 1:
        raise ValueError("step() helper expects a single-copy environment")
    obs, reward, terminated, truncated, info = env.step(np.asarray(joint_action)[None])
    info = {k: v[0] for k, v in info.items()}
    info["terminated"], info["truncated"] = bool(terminated[0]), bool(truncated[0])
    return as_global_state(obs[0]), float(reward[0]), bool(terminated[0] or truncated[0]), info
