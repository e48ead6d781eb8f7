"""Cooperative navigation around a wall in a 2x2 particle world."""

from __future__ import annotations

import numpy as np

from peglab.envs.base import EnvSpec, MultiAgentEnv

# action directions, same order as the gridworlds: left, right, up, down, stay
DIRECTIONS = np.array([[-1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, -1.0], [0.0, 0.0]])

IMPULSE = 0.5  # velocity gained per step from one force action (force * dt / mass)
DT = 0.1
DAMPING = 0.75
MAX_SPEED = 1.0
WORLD = 1.0  # positions live in [-WORLD, WORLD]^2
WALL_HALF_WIDTH = 0.05
WALL_HALF_HEIGHT = 0.5
COVER_RADIUS = 0.3
SUCCESS_RADIUS = 0.1

SPAWNS = np.array([[-0.6, 0.3], [-0.6, -0.3]])
LANDMARKS = np.array([[0.6, 0.3], [0.6, -0.3]])


def coop_nav_reward(positions, landmarks=LANDMARKS) -> np.ndarray:
    """Saturated coverage penalty in [-1.2, 0] (for two agents, two landmarks).

    ``positions`` has shape ``(..., n_agents, 2)``; the result drops the last
    two axes.
    """
    positions = np.asarray(positions, dtype=np.float64)
    landmarks = np.asarray(landmarks, dtype=np.float64)
    d = np.linalg.norm(positions[..., :, None, :] - landmarks[None, :, :], axis=-1)
    agent_terms = np.minimum(COVER_RADIUS, d.min(axis=-1)).sum(axis=-1)
    landmark_terms = np.minimum(COVER_RADIUS, d.min(axis=-2)).sum(axis=-1)
    return -(agent_terms + landmark_terms)


def _inside_wall(p):
    return (np.abs(p[..., 0]) < WALL_HALF_WIDTH) & (np.abs(p[..., 1]) <= WALL_HALF_HEIGHT)


class CoopNav(MultiAgentEnv):
    """Particle agents must go around a central wall to cover both landmarks.

    Each agent observes its position, velocity, the landmark offsets and the
    other agents' offsets (10 numbers for two agents). Agents pass through
    each other; only the wall and the world border constrain motion.
    """

    discrete_states = False

    def __init__(self, spec: EnvSpec, num_envs: int = 1, *, spawns=SPAWNS, landmarks=LANDMARKS):
        self.spec = spec
        self.num_envs = int(num_envs)
        self.spawns = np.asarray(spawns, dtype=np.float64)[: spec.n_agents]
        self.landmarks = np.asarray(landmarks, dtype=np.float64)
        n = spec.n_agents
        self.pos = np.zeros((self.num_envs, n, 2))
        self.vel = np.zeros((self.num_envs, n, 2))
        self.steps = np.zeros(self.num_envs, dtype=np.int64)
        self.done = np.ones(self.num_envs, dtype=bool)

    @property
    def local_dim(self) -> int:
        return 4 + 2 * len(self.landmarks) + 2 * (self.n_agents - 1)

    @property
    def personal_dim(self) -> int:
        return 4 + 2 * len(self.landmarks)

    @property
    def actor_dim(self) -> int:
        return self.local_dim

    @property
    def critic_dim(self) -> int:
        return self.local_dim * self.n_agents

    def reset(self, mask=None):
        idx = slice(None) if mask is None else np.asarray(mask, dtype=bool)
        self.pos[idx] = self.spawns
        self.vel[idx] = 0.0
        self.steps[idx] = 0
        self.done[idx] = False
        return self.observe()

    def observe(self):
        k, n = self.num_envs, self.n_agents
        rel_lm = (self.landmarks[None, None, :, :] - self.pos[:, :, None, :]).reshape(k, n, -1)
        parts = [self.pos, self.vel, rel_lm]
        if n > 1:
            others = []
            for i in range(n):
                idx = [j for j in range(n) if j != i]
                others.append((self.pos[:, idx, :] - self.pos[:, i : i + 1, :]).reshape(k, -1))
            parts.append(np.stack(others, axis=1))
        return np.concatenate(parts, axis=-1)

    def step(self, actions):
        actions = np.asarray(actions, dtype=np.int64).reshape(self.num_envs, self.n_agents)
        if self.done.any():
            raise RuntimeError("step() called on a finished episode; reset it first")
        vel = DAMPING * self.vel + IMPULSE * DIRECTIONS[actions]
        speed = np.linalg.norm(vel, axis=-1, keepdims=True)
        vel = np.where(speed > MAX_SPEED, vel * MAX_SPEED / np.maximum(speed, 1e-12), vel)
        new = self.pos + vel * DT

        hit = _inside_wall(new)
        if hit.any():
            from_side = np.abs(self.pos[..., 0]) >= WALL_HALF_WIDTH
            side = hit & from_side
            top = hit & ~from_side
            new[side, 0] = self.pos[side, 0]
            vel[side, 0] = 0.0
            new[top, 1] = self.pos[top, 1]
            vel[top, 1] = 0.0
        out = np.abs(new) > WORLD
        new = np.clip(new, -WORLD, WORLD)
        vel[out] = 0.0

        self.pos, self.vel = new, vel
        self.steps += 1
        reward = self.reward_for(new)
        d = np.linalg.norm(new[:, :, None, :] - self.landmarks[None, None], axis=-1)
        covered = d.min(axis=1) <= SUCCESS_RADIUS
        success = covered.all(axis=1) if self.n_agents > 1 else covered.any(axis=1)
        terminated = np.zeros(self.num_envs, dtype=bool)
        truncated = self.steps >= self.spec.max_step
        self.done = truncated.copy()
        return self.observe(), reward, terminated, truncated, {"success": success, "collisions": np.zeros(self.num_envs, dtype=np.int64)}

    def reward_for(self, positions):
        return coop_nav_reward(positions, self.landmarks)

    # -- encodings ---------------------------------------------------------
    def personal_obs(self, obs):
        return obs[..., : self.personal_dim]

    def _scale(self, dim):
        scale = np.full(dim, 2.0)
        scale[:4] = 1.0
        return scale

    def normalize_personal(self, local):
        local = np.asarray(local, dtype=np.float64)
        return local / self._scale(local.shape[-1])

    def actor_inputs(self, obs):
        return obs / self._scale(obs.shape[-1])

    def critic_inputs(self, obs):
        return (obs / self._scale(obs.shape[-1])).reshape(obs.shape[0], -1)
