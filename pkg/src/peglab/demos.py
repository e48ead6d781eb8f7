"""Personalized demonstrations: scripted experts, early-stopped PPO experts, files."""

from __future__ import annotations

import os
import tempfile
from collections import deque
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from peglab.core import RUNNING, TERMINATED, TRUNCATED, Rng, Trajectory, Transition, as_global_state, format_trajectories, parse_trajectories
from peglab.discriminators import AgentDemos, DemoSet
from peglab.envs import EnvSpec, GridWorld, make_env
from peglab.envs.base import MultiAgentEnv
from peglab.envs.coopnav import DAMPING, DIRECTIONS, DT, IMPULSE, MAX_SPEED, SUCCESS_RADIUS, WALL_HALF_HEIGHT, WALL_HALF_WIDTH
from peglab.envs.grid import DELTAS


@dataclass(frozen=True)
class SuboptimalityTarget:
    fraction: float = 0.5
    tolerance: float = 0.15  # relative half-width of the accepted band

    def __post_init__(self):
        if not 0.0 < self.fraction < 1.0:
            raise ValueError(f"fraction must lie in (0, 1), got {self.fraction}")

    def band(self, optimal: float) -> tuple[float, float]:
        centre = self.fraction * optimal
        return centre * (1.0 - self.tolerance), centre * (1.0 + self.tolerance)


@dataclass
class DemoFile:
    agent: int
    kind: str
    trajectories: list[Trajectory]
    optimality: str = "optimal"
    samples: int = 0
    avg_reward: float = 0.0

    def __post_init__(self):
        if not self.trajectories:
            raise ValueError("a demo file needs at least one trajectory")
        if not self.samples:
            self.samples, self.avg_reward = demo_stats(self)

    @property
    def state_dim(self) -> int:
        return len(self.trajectories[0].transitions[0].state[0])

    def to_agent_demos(self) -> AgentDemos:
        states, actions, nexts, steps = [], [], [], []
        for traj in self.trajectories:
            for t, tr in enumerate(traj.transitions):
                states.append(tr.state[0])
                actions.append(tr.joint_action[0])
                nexts.append(tr.next_state[0])
                steps.append(t)
        return AgentDemos(np.array(states), np.array(actions), np.array(nexts), np.array(steps), len(self.trajectories))


def demo_stats(demo: DemoFile | Sequence[Trajectory]) -> tuple[int, float]:
    """Transition count and mean undiscounted episodic reward."""
    trajectories = demo.trajectories if isinstance(demo, DemoFile) else list(demo)
    if not trajectories:
        raise ValueError("no trajectories")
    samples = sum(len(t) for t in trajectories)
    return samples, float(np.mean([sum(t.rewards) for t in trajectories]))


# -- file format --------------------------------------------------------------
#
# "# demo agent=<i> kind=<env> dims=<d> episodes=<E> optimality=<tag> samples=<n> avg_reward=<r>"
# followed by the trajectory block of peglab.core.


def format_demo(demo: DemoFile) -> str:
    head = (
        f"# demo agent={demo.agent} kind={demo.kind} dims={demo.state_dim} episodes={len(demo.trajectories)} "
        f"optimality={demo.optimality} samples={demo.samples} avg_reward={demo.avg_reward!r}"
    )
    return "\n".join([head, *format_trajectories(demo.trajectories)]) + "\n"


def parse_demo(text: str) -> DemoFile:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# demo "):
        raise ValueError("missing demo header")
    try:
        meta = dict(kv.split("=", 1) for kv in lines[0].split()[2:])
        agent, kind, dims = int(meta["agent"]), meta["kind"], int(meta["dims"])
        episodes, samples, avg = int(meta["episodes"]), int(meta["samples"]), float(meta["avg_reward"])
        optimality = meta["optimality"]
    except (KeyError, ValueError) as exc:
        raise ValueError(f"corrupt demo metadata: {exc}") from exc
    trajectories = parse_trajectories(lines[1:])
    demo = DemoFile(agent, kind, trajectories, optimality)
    if len(trajectories) != episodes or demo.state_dim != dims:
        raise ValueError("demo header does not match its trajectories")
    if demo.samples != samples or abs(demo.avg_reward - avg) > 1e-6:
        raise ValueError(
            f"corrupt demo metadata: stored samples={samples} avg={avg}, "
            f"recomputed samples={demo.samples} avg={demo.avg_reward}"
        )
    return demo


def save_demo(path: str | Path, demo: DemoFile) -> None:
    """Write atomically: a temporary file in the same directory is renamed into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        fh.write(format_demo(demo))
    os.replace(tmp, path)


def load_demo(path: str | Path) -> DemoFile:
    return parse_demo(Path(path).read_text())


def load_demos(paths: Sequence[str | Path], kind: str | None = None) -> DemoSet:
    """Load one file per agent into a validated ``DemoSet``.

    The files must share one environment kind (and match ``kind`` when
    given) and cover agents ``0..N-1`` exactly once.
    """
    if not paths:
        raise ValueError("no demonstration files given")
    files = [load_demo(p) for p in paths]
    kinds = {f.kind for f in files}
    if len(kinds) != 1:
        raise ValueError(f"demonstrations mix environment kinds: {sorted(kinds)}")
    found = kinds.pop()
    if kind is not None and found != kind:
        raise ValueError(f"demonstrations were recorded on {found}, expected {kind}")
    files.sort(key=lambda f: f.agent)
    if [f.agent for f in files] != list(range(len(files))):
        raise ValueError(f"demo files must cover agents 0..N-1 once, got {[f.agent for f in files]}")
    spec = EnvSpec.for_kind(found)
    if len(files) != spec.n_agents:
        raise ValueError(f"{found} has {spec.n_agents} agents, got {len(files)} demo files")
    expected = make_env(replace(spec, n_agents=1, permdp_agent=0)).local_dim
    for f in files:
        if f.state_dim != expected:
            raise ValueError(f"agent {f.agent} demos have dimension {f.state_dim}, {found} needs {expected}")
    return DemoSet(found, [f.to_agent_demos() for f in files])


# -- scripted grid experts --------------------------------------------------


def bfs_distances(env: GridWorld, goal) -> np.ndarray:
    """Steps-to-goal for every cell, -1 where unreachable.

    Lava and walls are never entered; doors only when the env keeps them open.
    """
    g = env.grid
    blocked = env._walls | env._lava
    if not env.door_always_open:
        blocked = blocked | env._doors
    dist = np.full((g.width, g.height), -1, dtype=np.int64)
    gx, gy = goal
    dist[gx, gy] = 0
    queue = deque([(gx, gy)])
    while queue:
        x, y = queue.popleft()
        for dx, dy in DELTAS[:4]:
            nx, ny = x + dx, y + dy
            if 0 <= nx < g.width and 0 <= ny < g.height and not blocked[ny, nx] and dist[nx, ny] < 0:
                dist[nx, ny] = dist[x, y] + 1
                queue.append((nx, ny))
    return dist


def shortest_path_actions(dist: np.ndarray, pos) -> list[int]:
    """Moves that reduce the distance to the goal by one."""
    x, y = pos
    out = []
    for a, (dx, dy) in enumerate(DELTAS[:4]):
        nx, ny = x + dx, y + dy
        if 0 <= nx < dist.shape[0] and 0 <= ny < dist.shape[1] and dist[nx, ny] == dist[x, y] - 1 and dist[nx, ny] >= 0:
            out.append(a)
    return out


def permdp(kind: str, agent: int, num_envs: int = 1, **overrides) -> MultiAgentEnv:
    spec = EnvSpec.for_kind(kind, **overrides)
    return make_env(replace(spec, n_agents=1, permdp_agent=agent), num_envs)


def _record(env: MultiAgentEnv, choose, max_steps: int | None = None) -> Trajectory:
    obs = env.reset()
    transitions = []
    while True:
        action = choose(obs[0, 0])
        next_obs, reward, term, trunc, _ = env.step(np.array([[action]]))
        done = TERMINATED if term[0] else TRUNCATED if trunc[0] else RUNNING
        transitions.append(Transition(as_global_state(obs[0]), (int(action),), float(reward[0]), as_global_state(next_obs[0]), done))
        obs = next_obs
        if done != RUNNING:
            return Trajectory(transitions)


def scripted_expert(env: MultiAgentEnv, rng: Rng, episodes: int = 50, *, agent: int | None = None) -> DemoFile:
    """Shortest-path demos with ties broken uniformly at random."""
    if env.num_envs != 1 or env.n_agents != 1:
        raise ValueError("scripted_expert expects a single-copy personalized MDP")
    agent = env.spec.permdp_agent if agent is None else agent
    if not env.spec.is_grid:
        return scripted_coop_expert(env, rng, episodes, agent=agent)
    goal = env.grid.goals[0]
    dist = bfs_distances(env, goal)
    sx, sy = env.grid.starts[0]
    if dist[sx, sy] < 0:
        raise ValueError(f"goal {goal} unreachable from start {(sx, sy)}")

    def choose(local):
        moves = shortest_path_actions(dist, (int(local[0]), int(local[1])))
        return int(moves[rng.integers(len(moves))])

    trajectories = [_record(env, choose) for _ in range(episodes)]
    return DemoFile(agent, env.spec.kind, trajectories, "optimal")


# -- scripted cooperative-navigation expert -----------------------------------


def coop_waypoints(start, landmark) -> list[np.ndarray]:
    """Around the wall on the side of the start, then onto the landmark."""
    side = 1.0 if start[1] >= 0 else -1.0
    gap = np.array([0.0, side * (WALL_HALF_HEIGHT + 0.2)])
    return [np.array([-0.2, gap[1]]), np.array([0.2, gap[1]]), np.asarray(landmark, dtype=np.float64)]


def _coop_choose(pos, vel, target, rng, noise: float) -> int:
    # one-step lookahead on the point-mass dynamics
    v = DAMPING * vel + IMPULSE * DIRECTIONS
    speed = np.linalg.norm(v, axis=1, keepdims=True)
    v = np.where(speed > MAX_SPEED, v * MAX_SPEED / np.maximum(speed, 1e-12), v)
    # lead the target by the current velocity so the agent brakes in time
    cost = np.linalg.norm(pos + DT * v + 2.0 * DT * v - target, axis=1)
    if noise > 0 and rng.random() < noise:
        return int(rng.integers(len(DIRECTIONS)))
    best = np.flatnonzero(cost <= cost.min() + 1e-12)
    return int(best[rng.integers(len(best))])


def scripted_coop_expert(env, rng: Rng, episodes: int = 50, *, agent: int = 0, noise: float = 0.05) -> DemoFile:
    landmarks = env.landmarks
    start = env.spawns[0]
    trajectories = []
    for _ in range(episodes):
        # nearest landmark on the agent's side of the map
        target = landmarks[np.argmin(np.linalg.norm(landmarks - np.array([landmarks[0][0], start[1]]), axis=1))]
        route = coop_waypoints(start, target)
        state = {"leg": 0}

        def choose(local, route=route):
            pos, vel = local[:2], local[2:4]
            while state["leg"] < len(route) - 1 and np.linalg.norm(pos - route[state["leg"]]) < 0.15:
                state["leg"] += 1
            if state["leg"] < len(route) - 1 and pos[0] > route[state["leg"]][0] and abs(pos[0]) > WALL_HALF_WIDTH:
                state["leg"] += 1
            target_pt = route[state["leg"]]
            if state["leg"] == len(route) - 1 and np.linalg.norm(pos - target_pt) < SUCCESS_RADIUS / 2:
                return 4 if np.linalg.norm(vel) < 0.05 else _coop_choose(pos, vel, target_pt, rng, 0.0)
            return _coop_choose(pos, vel, target_pt, rng, noise)

        trajectories.append(_record(env, choose))
    return DemoFile(agent, env.spec.kind, trajectories, "optimal")


# -- early-stopped PPO experts -------------------------------------------------


class DenseGridReward:
    """Adds the decrease in Manhattan distance to the goal to the sparse reward.

    The shaping is a potential difference, so running into lava early gains
    nothing over walking toward the goal.
    """

    def __init__(self, env: GridWorld, scale: float = 1.0):
        self.env = env
        self.scale = scale
        self._goal = np.array(env.grid.goals, dtype=np.int64)

    def __getattr__(self, name):
        return getattr(self.env, name)

    def _potential(self, pos):
        return -np.abs(pos - self._goal).sum(axis=(1, 2)).astype(np.float64)

    def step(self, actions):
        before = self._potential(self.env.pos)
        obs, reward, term, trunc, info = self.env.step(actions)
        shaped = reward + self.scale * (self._potential(self.env.pos) - before)
        return obs, shaped, term, trunc, info


class TargetNotReached(ValueError):
    """The early-stopping band was never hit within the iteration budget."""


@dataclass
class SuboptimalResult:
    demo: DemoFile
    iterations: int
    policy_reward: float
    history: list[float] = field(default_factory=list)


def _sample_policy_episodes(env, learner, rng, min_samples: int) -> list[Trajectory]:
    from peglab.marl.rollout import policy_actions

    trajectories, total = [], 0
    while total < min_samples:
        traj = _record(env, lambda local: int(policy_actions(env, [learner], np.asarray(local)[None, None], rng)[0][0, 0]))
        trajectories.append(traj)
        total += len(traj)
    return trajectories


def train_suboptimal_expert(
    kind: str,
    agent: int,
    target: SuboptimalityTarget,
    optimal_avg: float,
    rng: Rng,
    *,
    num_envs: int = 8,
    buffer_size: int = 1024,
    max_iterations: int = 300,
    eval_episodes: int = 100,
    min_samples: int = 350,
    max_redraws: int = 50,
    lr: float = 3e-4,
) -> SuboptimalResult:
    """Dense-reward PPO on the personalized MDP, stopped inside the target band.

    After every iteration the stochastic policy is scored by its mean sparse
    episodic reward over ``eval_episodes``; the first iteration inside
    ``target.band(optimal_avg)`` freezes the policy. Demos are then drawn
    from it until at least ``min_samples`` transitions exist, redrawing whole
    sets whose average falls outside the band.
    """
    from peglab.marl.algos import TrainConfig, run_iteration
    from peglab.marl.learner import AgentLearner
    from peglab.marl.ppo import PpoConfig
    from peglab.marl.rollout import evaluate

    train_env = permdp(kind, agent, num_envs)
    if not train_env.spec.is_grid:
        raise ValueError("early-stopped PPO experts are built for gridworlds; coop_nav uses the scripted controller")
    dense = DenseGridReward(train_env)
    eval_env = permdp(kind, agent, eval_episodes)
    single = permdp(kind, agent, 1)
    lo, hi = target.band(optimal_avg)
    cfg = TrainConfig(mode="mappo", ppo=PpoConfig(buffer_size=buffer_size, lr=lr), iterations=max_iterations)
    learner = AgentLearner.build(train_env.actor_dim, train_env.critic_dim, train_env.n_actions, rng.substream("init"), lr)
    history = []
    for k in range(max_iterations):
        run_iteration("mappo", dense, [learner], None, cfg, k, rng.substream("train"))
        score = evaluate(eval_env, [learner], eval_episodes, rng.substream(f"eval{k}"), greedy=False)["mean_reward"]
        history.append(score)
        if lo <= score <= hi:
            for attempt in range(max_redraws):
                trajectories = _sample_policy_episodes(single, learner, rng.substream(f"demo{k}/{attempt}"), min_samples)
                _, avg = demo_stats(trajectories)
                if lo <= avg <= hi:
                    demo = DemoFile(agent, kind, trajectories, f"fraction={target.fraction}")
                    return SuboptimalResult(demo, k + 1, score, history)
    raise TargetNotReached(
        f"suboptimality target {target.fraction} (band [{lo:.3f}, {hi:.3f}]) never bracketed in {max_iterations} iterations"
    )


def expert_for(kind: str, agent: int, rng: Rng, *, optimal: bool = True, fraction: float = 0.5, episodes: int = 50) -> DemoFile:
    """Convenience front end used by the CLI and the harness."""
    env = permdp(kind, agent, 1)
    opt = scripted_expert(env, rng.substream("scripted"), episodes, agent=agent)
    if optimal:
        return opt
    return train_suboptimal_expert(kind, agent, SuboptimalityTarget(fraction), opt.avg_reward, rng.substream("ppo")).demo
