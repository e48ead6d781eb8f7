"""The algorithm modes and the per-iteration training loop.

Every mode collects rollouts with decentralized PPO learners and differs only
in the reward each agent optimizes:

* ``mappo``: the environment reward.
* ``egmarl``: occupancy-ratio shadow reward, averaged across agents.
* ``gegmarl``: behavior discriminator bonus ``-eta log D``, averaged across agents.
* ``pegmarl``: behavior bonus gated by the transition discriminator.
* ``magail``: the ``gegmarl`` bonus alone, environment reward dropped.
* ``dm2``: ``pegmarl`` with the transition gate fixed to one.

The two averaging modes also run neighbor critic consensus after updates.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from peglab.core import Rng
from peglab.discriminators import (
    BehaviorDisc,
    DemoSet,
    DiscSchedule,
    TransitionDisc,
    behavior_features,
    reshape_geg,
    reshape_peg,
    transition_features,
    update_behavior_geg,
    update_behavior_peg,
    update_transition,
)
from peglab.envs.base import MultiAgentEnv
from peglab.marl.learner import AgentLearner, CommGraph, average_reshaped_rewards, neighbor_average_critics
from peglab.marl.ppo import NumericError, PpoConfig, compute_gae_batched, ppo_update
from peglab.marl.rollout import Rollout, collect_rollouts, evaluate
from peglab.occupancy import OccupancyTable, ShadowRewardParams, estimate_from_arrays, shadow_bonus

MODES = ("mappo", "egmarl", "gegmarl", "pegmarl", "magail", "dm2")
AVERAGING_MODES = ("egmarl", "gegmarl")
GEG_MODES = ("gegmarl", "magail")
PEG_MODES = ("pegmarl", "dm2")
DEFAULT_ETA = {"coop_nav": 0.2}
GRID_ETA = 0.05


def default_eta(kind: str) -> float:
    return DEFAULT_ETA.get(kind, GRID_ETA)


@dataclass
class TrainConfig:
    mode: str = "pegmarl"
    ppo: PpoConfig = field(default_factory=PpoConfig)
    disc: DiscSchedule = field(default_factory=DiscSchedule)
    eta: float | None = None  # None picks the per-environment default
    eta_decay: bool = False  # linear decay to zero over ``iterations``
    iterations: int = 500
    num_envs: int = 16
    eval_every: int = 10
    eval_episodes: int = 32
    graph: str = "complete"
    averaging: str = "jacobi"
    shadow_eps: float = 1e-8
    shadow_clamp: float = 10.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {', '.join(MODES)}")
        if self.iterations < 1 or self.num_envs < 1 or self.eval_every < 1 or self.eval_episodes < 1:
            raise ValueError("iterations, num_envs, eval_every and eval_episodes must be positive")

    @property
    def uses_demos(self) -> bool:
        return self.mode != "mappo"

    def eta_at(self, kind: str, k: int) -> float:
        eta = default_eta(kind) if self.eta is None else self.eta
        if self.eta_decay:
            eta *= max(0.0, 1.0 - k / self.iterations)
        return eta


def check_mode(mode: str, env: MultiAgentEnv) -> None:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "egmarl" and not env.discrete_states:
        raise ValueError(
            "egmarl estimates occupancy tables by counting and needs a discrete state space; "
            f"{env.spec.kind} is continuous"
        )


def build_learners(env: MultiAgentEnv, mode: str, rng: Rng, cfg: TrainConfig | None = None) -> list[AgentLearner]:
    cfg = cfg or TrainConfig(mode=mode)
    learners = []
    d = env.local_dim if env.discrete_states else env.personal_dim
    for i in range(env.n_agents):
        sub = rng.substream(f"agent{i}")
        learner = AgentLearner.build(env.actor_dim, env.critic_dim, env.n_actions, sub.substream("nets"), cfg.ppo.lr)
        if mode in GEG_MODES:
            learner.behavior = BehaviorDisc(d, env.n_actions, sub.substream("behavior"), convention="geg", lr=cfg.disc.lr)
        elif mode in PEG_MODES:
            learner.behavior = BehaviorDisc(d, env.n_actions, sub.substream("behavior"), convention="peg", lr=cfg.disc.lr)
            if mode == "pegmarl":
                learner.transition = TransitionDisc(d, env.n_actions, sub.substream("transition"), lr=cfg.disc.lr)
        learners.append(learner)
    return learners


# -- reward shaping ---------------------------------------------------------


@dataclass
class Shaping:
    rewards: np.ndarray  # (M, N) reshaped rewards of the valid rows
    bonus: np.ndarray  # (N,) mean bonus over rows
    disc_objective: np.ndarray  # (N,) post-update objective (NaN if no discriminator)


def _valid_rows(rollout: Rollout):
    return np.nonzero(rollout.valid)


def expert_tables(env: MultiAgentEnv, demos: DemoSet, gamma: float) -> list[OccupancyTable]:
    return [
        estimate_from_arrays(np.rint(d.states).astype(np.int64), d.actions, d.timesteps, d.n_episodes, gamma)
        for d in demos.agents
    ]


def shape_rewards(
    mode: str,
    env: MultiAgentEnv,
    learners,
    demos: DemoSet | None,
    rollout: Rollout,
    eta: float,
    rng: Rng,
    *,
    schedule: DiscSchedule | None = None,
    gamma: float = 0.99,
    update_discriminators: bool = True,
    expert_occupancy: list[OccupancyTable] | None = None,
    shadow: ShadowRewardParams | None = None,
) -> Shaping:
    """Per-agent reshaped rewards for the valid rows of ``rollout``."""
    check_mode(mode, env)
    rows = _valid_rows(rollout)
    env_r = rollout.rewards[rows]
    n = env.n_agents
    base = np.zeros_like(env_r) if mode == "magail" else env_r
    out = np.repeat(base[:, None], n, axis=1)
    objective = np.full(n, np.nan)
    if mode == "mappo":
        return Shaping(out, np.zeros(n), objective)
    if demos is None:
        raise ValueError(f"mode {mode} needs demonstrations")

    obs = rollout.obs[rows]
    next_obs = rollout.next_obs[rows]
    actions = rollout.actions[rows]
    if mode == "egmarl":
        shadow = shadow or ShadowRewardParams(eta=eta)
        tables = expert_occupancy or expert_tables(env, demos, gamma)
        n_episodes = rollout.n_episodes()
        timesteps = rollout.timesteps[rows]
        for i in range(n):
            states = np.rint(env.personal_obs(obs[:, i])).astype(np.int64)
            policy = estimate_from_arrays(states, actions[:, i], timesteps, n_episodes, gamma)
            keys = [(tuple(int(v) for v in s), int(a)) for s, a in zip(states, actions[:, i])]
            bonus = shadow_bonus(policy.lookup(keys), tables[i].lookup(keys), shadow)
            out[:, i] = base + eta * bonus
    else:
        for i, learner in enumerate(learners):
            demo = demos[i]
            s = env.normalize_personal(env.personal_obs(obs[:, i]))
            s_next = env.normalize_personal(env.personal_obs(next_obs[:, i]))
            e_s = env.normalize_personal(demo.states)
            e_next = env.normalize_personal(demo.next_states)
            pol_b = behavior_features(s, actions[:, i], env.n_actions)
            exp_b = behavior_features(e_s, demo.actions, env.n_actions)
            disc_rng = rng.substream(f"agent{i}")
            if mode in GEG_MODES:
                if update_discriminators:
                    objective[i] = update_behavior_geg(learner.behavior, pol_b, exp_b, disc_rng, schedule)
                out[:, i] = reshape_geg(base, learner.behavior.predict(pol_b), eta)
                continue
            if update_discriminators:
                objective[i] = update_behavior_peg(learner.behavior, pol_b, exp_b, disc_rng, schedule)
            d_beh = learner.behavior.predict(pol_b)
            if mode == "pegmarl":
                pol_t = transition_features(s, actions[:, i], s_next, env.n_actions)
                if update_discriminators:
                    exp_t = transition_features(e_s, demo.actions, e_next, env.n_actions)
                    objective[i] += update_transition(learner.transition, pol_t, exp_t, disc_rng.substream("transition"), schedule)
                d_trans = learner.transition.predict(pol_t)
            else:
                d_trans = np.ones_like(d_beh)
            out[:, i] = reshape_peg(base, d_beh, d_trans, eta)
    bonus = (out - base[:, None]).mean(axis=0)
    return Shaping(out, bonus, objective)


# -- one iteration ----------------------------------------------------------


def _advantages(env, learners, rollout: Rollout, shaped_rows: np.ndarray, gamma: float, lam: float):
    """GAE per agent on the time-major layout; returns flattened valid rows."""
    rows = _valid_rows(rollout)
    t_max, k = rollout.valid.shape
    n = env.n_agents
    rewards = np.zeros((t_max, k, n))
    rewards[rows] = shaped_rows
    values = rollout.values
    next_values = np.zeros_like(values)
    next_values[:-1] = values[1:]
    trunc = rollout.truncated & rollout.valid
    if trunc.any():
        # bootstrap from V(s_T) where the time limit cut the episode
        cx = env.critic_inputs(rollout.next_obs[trunc])
        next_values[trunc] = np.stack([lr.values(cx) for lr in learners], axis=1)
    term = np.repeat(rollout.terminated[..., None], n, axis=2)
    ends = np.repeat(rollout.episode_end()[..., None], n, axis=2)
    adv, targets = compute_gae_batched(rewards, values, next_values, term, ends, gamma, lam)
    return adv[rows], targets[rows]


def run_iteration(
    mode: str,
    env: MultiAgentEnv,
    learners,
    demos: DemoSet | None,
    cfg: TrainConfig,
    k: int,
    rng: Rng,
    *,
    graph: CommGraph | None = None,
    expert_occupancy=None,
) -> dict:
    """Collect, shape, update. Returns training statistics for iteration ``k``."""
    check_mode(mode, env)
    it_rng = rng.substream(f"iter{k}")
    rollout = collect_rollouts(env, learners, cfg.ppo.buffer_size, it_rng.substream("rollout"))
    eta = cfg.eta_at(env.spec.kind, k)
    shaping = shape_rewards(
        mode, env, learners, demos, rollout, eta, it_rng.substream("disc"),
        schedule=cfg.disc, gamma=cfg.ppo.gamma, expert_occupancy=expert_occupancy,
        shadow=ShadowRewardParams(eta=eta, smoothing_eps=cfg.shadow_eps, clamp=cfg.shadow_clamp),
    )
    rewards = shaping.rewards
    if mode in AVERAGING_MODES:
        avg = average_reshaped_rewards(list(rewards.T))
        rewards = np.repeat(avg[:, None], env.n_agents, axis=1)
    adv, targets = _advantages(env, learners, rollout, rewards, cfg.ppo.gamma, cfg.ppo.gae_lambda)

    rows = _valid_rows(rollout)
    obs = rollout.obs[rows]
    actor_x = env.actor_inputs(obs)
    critic_x = env.critic_inputs(obs)
    stats = []
    for i, learner in enumerate(learners):
        stats.append(
            ppo_update(
                learner, actor_x[:, i], critic_x, rollout.actions[rows][:, i], rollout.log_probs[rows][:, i],
                adv[:, i], targets[:, i], cfg.ppo, it_rng.substream(f"ppo{i}"),
            )
        )
    if mode in AVERAGING_MODES:
        neighbor_average_critics(learners, graph or CommGraph.from_name(cfg.graph, env.n_agents), cfg.averaging)

    returns, successes = rollout.episode_returns()
    return {
        "env_steps": rollout.env_steps,
        "train_reward": float(returns.mean()) if len(returns) else float("nan"),
        "train_success": float(successes.mean()) if len(successes) else float("nan"),
        "bonus": shaping.bonus,
        "disc_objective": shaping.disc_objective,
        "actor_loss": float(np.mean([s["actor_loss"] for s in stats])),
        "critic_loss": float(np.mean([s["critic_loss"] for s in stats])),
        "entropy": float(np.mean([s["entropy"] for s in stats])),
    }


# -- full runs --------------------------------------------------------------


@dataclass
class IterationMetrics:
    iteration: int
    env_steps: int
    mean_reward: float
    std_reward: float
    success_rate: float
    train_reward: float
    bonus: list[float]
    disc_objective: list[float]
    actor_loss: float
    critic_loss: float
    entropy: float
    wall_clock_s: float = 0.0

    def columns(self) -> list[str]:
        n = len(self.bonus)
        return (
            ["iteration", "env_steps", "mean_episodic_env_reward", "std", "success_rate", "train_reward"]
            + [f"bonus_{i}" for i in range(n)]
            + [f"disc_objective_{i}" for i in range(n)]
            + ["actor_loss", "critic_loss", "entropy"]
        )

    def row(self) -> list[str]:
        vals = [self.mean_reward, self.std_reward, self.success_rate, self.train_reward, *self.bonus,
                *self.disc_objective, self.actor_loss, self.critic_loss, self.entropy]
        return [str(self.iteration), str(self.env_steps)] + [repr(float(v)) for v in vals]


class Trainer:
    """One seeded training run: env copies, learners, demos and evaluation."""

    def __init__(self, env: MultiAgentEnv, eval_env: MultiAgentEnv, cfg: TrainConfig, seed: int, demos: DemoSet | None = None):
        check_mode(cfg.mode, env)
        if cfg.uses_demos:
            if demos is None:
                raise ValueError(f"mode {cfg.mode} needs demonstrations")
            d = env.local_dim if env.discrete_states else env.personal_dim
            demos.check(env.spec.kind, env.n_agents, d)
        self.env, self.eval_env, self.cfg, self.demos = env, eval_env, cfg, demos
        self.rng = Rng(seed, "train")
        self.learners = build_learners(env, cfg.mode, self.rng.substream("init"), cfg)
        self.graph = CommGraph.from_name(cfg.graph, env.n_agents)
        self.expert_occupancy = (
            expert_tables(env, demos, cfg.ppo.gamma) if cfg.mode == "egmarl" else None
        )
        self.env_steps = 0

    def step(self, k: int) -> dict:
        stats = run_iteration(
            self.cfg.mode, self.env, self.learners, self.demos, self.cfg, k, self.rng,
            graph=self.graph, expert_occupancy=self.expert_occupancy,
        )
        for key in ("train_reward", "actor_loss", "critic_loss", "entropy"):
            if not np.isfinite(stats[key]) and key != "train_reward":
                raise NumericError(f"non-finite {key} at iteration {k}")
        self.env_steps += stats["env_steps"]
        return stats

    def evaluate(self) -> dict:
        return evaluate(self.eval_env, self.learners, self.cfg.eval_episodes)

    def run(self, callback=None) -> list[IterationMetrics]:
        """Train for ``cfg.iterations`` and evaluate every ``eval_every`` iterations."""
        history: list[IterationMetrics] = []
        window: list[dict] = []
        start = time.perf_counter()
        for k in range(self.cfg.iterations):
            window.append(self.step(k))
            last = k == self.cfg.iterations - 1
            if (k + 1) % self.cfg.eval_every == 0 or last:
                ev = self.evaluate()
                m = IterationMetrics(
                    iteration=k + 1,
                    env_steps=self.env_steps,
                    mean_reward=ev["mean_reward"],
                    std_reward=ev["std_reward"],
                    success_rate=ev["success_rate"],
                    train_reward=float(np.nanmean([w["train_reward"] for w in window])),
                    bonus=list(np.mean([w["bonus"] for w in window], axis=0)),
                    disc_objective=list(np.mean([w["disc_objective"] for w in window], axis=0)),
                    actor_loss=float(np.mean([w["actor_loss"] for w in window])),
                    critic_loss=float(np.mean([w["critic_loss"] for w in window])),
                    entropy=float(np.mean([w["entropy"] for w in window])),
                    wall_clock_s=time.perf_counter() - start,
                )
                if not all(np.isfinite([m.mean_reward, m.actor_loss, m.critic_loss])):
                    raise NumericError(f"non-finite metrics at iteration {k + 1}")
                history.append(m)
                window = []
                if callback is not None:
                    callback(m)
        return history
