"""Experiment campaigns: configuration, seeded runs, aggregation, oracle, heatmaps."""

from __future__ import annotations

import csv
import heapq
import itertools
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from peglab.core import Rng
from peglab.demos import bfs_distances, load_demo, load_demos
from peglab.discriminators import DemoSet, DiscSchedule
from peglab.envs import EnvSpec, GridWorld, make_env
from peglab.envs.base import MultiAgentEnv
from peglab.marl.algos import MODES, TrainConfig, Trainer, build_learners
from peglab.marl.ppo import NumericError, PpoConfig
from peglab.marl.rollout import evaluate, policy_actions
from peglab.nn import load_networks, save_networks


DEFAULT_ITERATIONS = {"coop_nav": 750}


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


# -- configuration -------------------------------------------------------------


@dataclass
class ExperimentConfig:
    env: str = "lava2"
    mode: str = "pegmarl"
    ppo: PpoConfig = field(default_factory=PpoConfig)
    disc: DiscSchedule = field(default_factory=DiscSchedule)
    eta: float | None = None
    eta_decay: bool = False
    demos: list[str] = field(default_factory=list)
    seeds: list[int] = field(default_factory=lambda: [0])
    iterations: int | None = None  # None: 500 for gridworlds, 750 for coop_nav
    eval_every: int = 10
    eval_episodes: int = 32
    num_envs: int = 16
    graph: str = "complete"
    averaging: str = "jacobi"
    env_overrides: dict = field(default_factory=dict)
    output_dir: str = "runs/experiment"

    def validate(self, *, check_files: bool = True) -> None:
        try:
            spec = self.env_spec()
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {', '.join(MODES)}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"seeds must be distinct, got {self.seeds}")
        if self.mode == "egmarl" and not spec.is_grid:
            raise ConfigError(f"egmarl needs a discrete state space; {self.env} is continuous")
        if self.mode != "mappo":
            if not self.demos:
                raise ConfigError(f"mode {self.mode} needs demonstration files")
            if check_files:
                missing = [p for p in self.demos if not Path(p).exists()]
                if missing:
                    raise ConfigError(f"demonstration files not found: {', '.join(missing)}")
        try:
            self.train_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def env_spec(self) -> EnvSpec:
        return EnvSpec.for_kind(self.env, **self.env_overrides)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            mode=self.mode, ppo=self.ppo, disc=self.disc, eta=self.eta, eta_decay=self.eta_decay,
            iterations=self.resolved_iterations(), num_envs=self.num_envs, eval_every=self.eval_every,
            eval_episodes=self.eval_episodes, graph=self.graph, averaging=self.averaging,
        )

    def resolved_iterations(self) -> int:
        if self.iterations is not None:
            return self.iterations
        return DEFAULT_ITERATIONS.get(self.env, 500)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = dict(data or {})
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        try:
            if "ppo" in data:
                data["ppo"] = PpoConfig(**(data["ppo"] or {}))
            if "disc" in data:
                data["disc"] = DiscSchedule(**(data["disc"] or {}))
            cfg = cls(**data)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc
        cfg.demos = [str(p) for p in cfg.demos]
        cfg.seeds = [int(s) for s in cfg.seeds]
        return cfg

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    @classmethod
    def loads(cls, text: str) -> "ExperimentConfig":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"config is not valid YAML: {exc}") from exc
        if data is not None and not isinstance(data, dict):
            raise ConfigError("config must be a mapping")
        return cls.from_dict(data or {})


def load_config(path: str | Path) -> ExperimentConfig:
    return ExperimentConfig.loads(Path(path).read_text())


def save_config(path: str | Path, cfg: ExperimentConfig) -> None:
    Path(path).write_text(cfg.dumps())


# -- single runs -------------------------------------------------------------


def _envs(cfg: ExperimentConfig) -> tuple[MultiAgentEnv, MultiAgentEnv]:
    spec = cfg.env_spec()
    return make_env(spec, cfg.num_envs), make_env(spec, cfg.eval_episodes)


def write_metrics(path: str | Path, history) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        if history:
            writer.writerow(history[0].columns())
        for m in history:
            writer.writerow(m.row())


def read_metrics(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def save_checkpoint(path: str | Path, learners) -> None:
    nets = {}
    for i, learner in enumerate(learners):
        nets.update(learner.networks(f"agent{i}/"))
    save_networks(path, nets)


def load_checkpoint(path: str | Path, env: MultiAgentEnv, mode: str = "mappo"):
    nets = load_networks(path)
    learners = build_learners(env, "mappo", Rng(0, "checkpoint"))
    for i, learner in enumerate(learners):
        try:
            learner.actor.set_params(nets[f"agent{i}/actor"].params)
            learner.critic.set_params(nets[f"agent{i}/critic"].params)
        except KeyError as exc:
            raise ValueError(f"checkpoint lacks networks for agent {i}") from exc
    return learners


def run_seed(cfg: ExperimentConfig, seed: int, demos: DemoSet | None = None) -> Path:
    """Train one seed and write its metrics CSV and checkpoint; returns the CSV path."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if demos is None and cfg.mode != "mappo":
        demos = load_demos(cfg.demos, cfg.env)
    env, eval_env = _envs(cfg)
    trainer = Trainer(env, eval_env, cfg.train_config(), seed, demos)
    csv_path = out / f"seed_{seed}.csv"
    try:
        history = trainer.run()
    except NumericError as exc:
        (out / f"seed_{seed}.error.txt").write_text(f"seed {seed} aborted: {exc}\n")
        raise
    write_metrics(csv_path, history)
    with open(out / f"seed_{seed}.timing.csv", "w") as fh:
        fh.write("iteration,wall_clock_s\n")
        for m in history:
            fh.write(f"{m.iteration},{m.wall_clock_s:.3f}\n")
    save_checkpoint(out / f"seed_{seed}.ckpt", trainer.learners)
    return csv_path


def _run_seed_safe(args):
    cfg, seed = args
    try:
        return run_seed(cfg, seed), None
    except NumericError as exc:
        return None, f"seed {seed}: {exc}"


def run_experiment(cfg: ExperimentConfig, *, workers: int = 1) -> dict:
    """Run every seed, then write ``aggregate.csv``.

    Seeds whose metrics turn non-finite are recorded in ``errors`` and left out
    of the aggregate.
    """
    cfg.validate()
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_config(out / "config.yaml", cfg)
    jobs = [(cfg, s) for s in cfg.seeds]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_run_seed_safe, jobs))
    else:
        results = [_run_seed_safe(job) for job in jobs]
    paths = [p for p, _ in results if p is not None]
    errors = [e for _, e in results if e is not None]
    if not paths:
        raise NumericError("; ".join(errors))
    aggregate_path = out / "aggregate.csv"
    write_aggregate(aggregate_path, aggregate(paths))
    return {"seed_csvs": paths, "aggregate": aggregate_path, "errors": errors}


# -- aggregation ---------------------------------------------------------------

AGGREGATE_COLUMNS = (
    "iteration", "env_steps", "reward_mean", "reward_std", "success_mean", "success_std", "n_seeds",
)


def aggregate(csv_paths: Sequence[str | Path]) -> list[dict]:
    """Mean and population std across seeds at each evaluation point."""
    runs = [read_metrics(p) for p in csv_paths]
    if not runs:
        raise ValueError("nothing to aggregate")
    by_iter: dict[int, list[dict]] = {}
    for rows in runs:
        for row in rows:
            by_iter.setdefault(int(row["iteration"]), []).append(row)
    out = []
    for it in sorted(by_iter):
        rows = by_iter[it]
        rewards = np.array([r["mean_episodic_env_reward"] for r in rows])
        success = np.array([r["success_rate"] for r in rows])
        out.append(
            {
                "iteration": it,
                "env_steps": float(np.mean([r["env_steps"] for r in rows])),
                "reward_mean": float(rewards.mean()),
                "reward_std": float(rewards.std()),
                "success_mean": float(success.mean()),
                "success_std": float(success.std()),
                "n_seeds": len(rows),
            }
        )
    return out


def write_aggregate(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(AGGREGATE_COLUMNS)
        for row in rows:
            writer.writerow([row["iteration"], repr(row["env_steps"]), repr(row["reward_mean"]), repr(row["reward_std"]),
                             repr(row["success_mean"]), repr(row["success_std"]), row["n_seeds"]])


def read_aggregate(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in row.items()} for row in csv.DictReader(fh)]


# -- oracle ------------------------------------------------------------------------


def _heuristic_tables(env: GridWorld):
    """Per-agent admissible distance tables for the A* search."""
    tables = []
    relaxed = GridWorld(env.spec, env.grid, 1, door_always_open=True)
    for i, goal in enumerate(env.grid.goals):
        if i in env.success_agents:
            tables.append(bfs_distances(relaxed, goal))
        else:
            tables.append(None)
    return tables


def optimal_steps(env: GridWorld, *, max_expansions: int = 200_000) -> int:
    """Fewest steps to joint success with no collisions and no lava (A* search).

    The heuristic is the largest single-agent distance to goal with doors
    open, which never overestimates. Returns -1 if success is unreachable
    within the time limit.
    """
    n = env.n_agents
    joint = np.array(list(itertools.product(range(env.n_actions), repeat=n)), dtype=np.int64)
    search = GridWorld(env.spec, env.grid, len(joint), success_agents=env.success_agents,
                       freeze_at_goal=env.freeze_at_goal, door_always_open=env.door_always_open)
    tables = _heuristic_tables(env)
    goals = np.array(env.grid.goals)

    def h(pos) -> int:
        best = 0
        for i, table in enumerate(tables):
            if table is None or (env.freeze_at_goal and tuple(pos[i]) == tuple(goals[i])):
                continue
            d = table[pos[i][0], pos[i][1]]
            if d < 0:
                return math.inf
            best = max(best, int(d))
        return best

    start = tuple(map(tuple, env.grid.starts))
    frontier = [(h(np.array(start)), 0, start, False)]
    best_g = {start: 0}
    expansions = 0
    while frontier:
        f, g, state, done = heapq.heappop(frontier)
        if done:
            return g
        if g > best_g.get(state, math.inf) or g >= env.spec.max_step:
            continue
        expansions += 1
        if expansions > max_expansions:
            raise RuntimeError("oracle search exceeded its expansion budget")
        search.set_state(np.array(state), steps=0)
        _, _, _, _, info = search.step(joint)
        for k in np.flatnonzero((info["collisions"] == 0) & ~info["lava"]):
            nxt = tuple(map(tuple, search.pos[k]))
            if info["success"][k]:
                heapq.heappush(frontier, (g + 1, g + 1, nxt, True))
                continue
            if g + 1 < best_g.get(nxt, math.inf):
                best_g[nxt] = g + 1
                hv = h(search.pos[k])
                if hv < math.inf:
                    heapq.heappush(frontier, (g + 1 + hv, g + 1, nxt, False))
    return -1


def oracle_reward(kind_or_env: str | GridWorld) -> float:
    """Best achievable episodic reward: the success reward at the optimal step count."""
    env = make_env(kind_or_env) if isinstance(kind_or_env, str) else kind_or_env
    if not env.spec.is_grid or not isinstance(env, GridWorld):
        raise ValueError(
            "the oracle needs a gridworld; for continuous environments report the best observed evaluation reward"
        )
    steps = optimal_steps(env)
    if steps < 0:
        return 0.0
    return float(env.spec.success_reward()(float(steps)))


# -- visitation heatmaps -------------------------------------------------------------


def rollout_visitation(env: MultiAgentEnv, learners, episodes: int, rng, *, greedy: bool = False) -> list[dict]:
    """Per-agent counts of visited cells (one per agent-step, pre-move state)."""
    counts = [dict() for _ in range(env.n_agents)]
    single = make_env(env.spec, 1) if env.num_envs != 1 else env
    for _ in range(episodes):
        obs = single.reset()
        while True:
            actions, _ = policy_actions(single, learners, obs, rng, greedy=greedy)
            for i in range(single.n_agents):
                cell = tuple(int(round(v)) for v in obs[0, i, :2])
                counts[i][cell] = counts[i].get(cell, 0) + 1
            obs, _, term, trunc, _ = single.step(actions)
            if term[0] or trunc[0]:
                break
    return counts


def demo_visitation(paths: Sequence[str | Path]) -> list[dict]:
    counts = []
    for p in sorted(paths, key=lambda p: load_demo(p).agent):
        c: dict = {}
        for traj in load_demo(p).trajectories:
            for tr in traj.transitions:
                cell = tuple(int(round(v)) for v in tr.state[0][:2])
                c[cell] = c.get(cell, 0) + 1
        counts.append(c)
    return counts


def write_visitation(out_dir: str | Path, counts: list[dict], prefix: str = "visitation") -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, c in enumerate(counts):
        path = out_dir / f"{prefix}_agent{i}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["x", "y", "count"])
            for (x, y), n in sorted(c.items()):
                writer.writerow([x, y, n])
        paths.append(path)
    return paths


def export_visitation(checkpoint: str | Path, env: MultiAgentEnv, episodes: int, rng, out_dir, *, greedy: bool = False) -> list[Path]:
    learners = load_checkpoint(checkpoint, env)
    return write_visitation(out_dir, rollout_visitation(env, learners, episodes, rng, greedy=greedy))


def evaluate_checkpoint(checkpoint: str | Path, kind: str, episodes: int, *, greedy: bool = True, seed: int = 0, **overrides) -> dict:
    env = make_env(kind, episodes, **overrides)
    learners = load_checkpoint(checkpoint, env)
    return evaluate(env, learners, episodes, Rng(seed, "evaluate"), greedy=greedy)
