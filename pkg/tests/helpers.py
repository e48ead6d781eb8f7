"""Shared fixtures: a small 2-agent gridworld with fixed stochastic policies."""

import numpy as np

from peglab.envs import EnvSpec, GridWorld, parse_map

TOY_MAP = """
0..
...
..1
goal 0 2 2
goal 1 0 0
"""
TOY_START = ((0, 0), (2, 2))


def toy_env(num_envs=1, max_step=6):
    spec = EnvSpec("lava2", n_agents=2, max_step=max_step)
    return GridWorld(spec, parse_map(TOY_MAP), num_envs, freeze_at_goal=True)


def toy_policy_table(seed=0, concentration=1.0):
    """Action probabilities indexed ``[x0, y0, x1, y1, agent, action]``."""
    rng = np.random.default_rng(seed)
    return rng.dirichlet(np.full(5, concentration), size=(3, 3, 3, 3, 2))


def toy_policy_fn(table):
    def policy(state):
        (x0, y0), (x1, y1) = state
        return [table[x0, y0, x1, y1, 0], table[x0, y0, x1, y1, 1]]

    return policy


def toy_step_fn(max_step=6):
    env = toy_env(1, max_step)

    def step_fn(state, joint):
        env.set_state([state])
        _, _, term, _, _ = env.step(np.array([joint]))
        nxt = tuple(tuple(int(v) for v in p) for p in env.pos[0])
        return [(1.0, nxt, bool(term[0]))]

    return step_fn


def toy_rollouts(table, n_traj, seed, max_step=6, return_ids=False):
    """Monte-Carlo episodes: states ``(M, 2, 2)``, actions ``(M, 2)``, timesteps ``(M,)``.

    Rows are time-major; ``return_ids`` adds the episode index of each row.
    """
    rng = np.random.default_rng(seed)
    env = toy_env(n_traj, max_step)
    env.reset()
    alive = np.ones(n_traj, dtype=bool)
    states, actions, steps, ids = [], [], [], []
    t = 0
    while alive.any():
        pos = env.pos.copy()
        cdf = table[pos[:, 0, 0], pos[:, 0, 1], pos[:, 1, 0], pos[:, 1, 1]].cumsum(axis=-1)
        a = np.minimum((cdf < rng.random((n_traj, 2, 1))).sum(axis=-1), 4)
        states.append(pos[alive])
        actions.append(a[alive])
        steps.append(np.full(alive.sum(), t))
        ids.append(np.flatnonzero(alive))
        env.done[:] = False
        _, _, term, trunc, _ = env.step(a)
        alive &= ~(term | trunc)
        t += 1
    out = (np.concatenate(states), np.concatenate(actions), np.concatenate(steps))
    return out + (np.concatenate(ids),) if return_ids else out


class BanditEnv:
    """One agent, one state, two actions; action 0 pays 1 and action 1 pays 0."""

    n_actions = 2
    discrete_states = True
    local_dim = actor_dim = critic_dim = 1

    def __init__(self, num_envs=16):
        self.spec = EnvSpec("lava2", n_agents=2, max_step=1)
        self.num_envs = num_envs
        self.steps = np.zeros(num_envs, dtype=np.int64)

    @property
    def n_agents(self):
        return 1

    def reset(self, mask=None):
        return self.observe()

    def observe(self):
        return np.zeros((self.num_envs, 1, 1))

    def step(self, actions):
        actions = np.asarray(actions).reshape(self.num_envs, 1)
        reward = (actions[:, 0] == 0).astype(np.float64)
        done = np.ones(self.num_envs, dtype=bool)
        info = {"success": reward > 0}
        return self.observe(), reward, done, np.zeros_like(done), info

    def personal_obs(self, obs):
        return obs

    def normalize_personal(self, local):
        return local

    def actor_inputs(self, obs):
        return obs

    def critic_inputs(self, obs):
        return obs[:, 0]
