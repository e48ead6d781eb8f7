import csv
from collections import deque

import numpy as np
import pytest

from peglab.core import Rng
from peglab.demos import bfs_distances, expert_for, permdp, save_demo
from peglab.envs import EnvSpec, GridWorld, make_env, parse_map
from peglab.harness import (
    ConfigError,
    ExperimentConfig,
    aggregate,
    demo_visitation,
    load_checkpoint,
    load_config,
    oracle_reward,
    read_aggregate,
    read_metrics,
    rollout_visitation,
    run_experiment,
    save_checkpoint,
    save_config,
    write_visitation,
)
from peglab.marl.algos import build_learners
from peglab.marl.ppo import PpoConfig
from peglab.marl.rollout import policy_actions


def _tiny(tmp_path, **kw):
    base = dict(mode="mappo", ppo=PpoConfig(buffer_size=128, minibatch=64), iterations=1, eval_episodes=4,
                num_envs=4, output_dir=str(tmp_path / "run"))
    base.update(kw)
    return ExperimentConfig(**base)


def test_config_round_trip(tmp_path):
    cfg = ExperimentConfig(env="door_hard", mode="gegmarl", eta=0.1, seeds=[3, 1], demos=["a.demo", "b.demo"],
                           env_overrides={"max_step": 80}, ppo=PpoConfig(lr=3e-4))
    path = tmp_path / "c.yaml"
    save_config(path, cfg)
    back = load_config(path)
    assert back == cfg
    assert ExperimentConfig.loads(back.dumps()) == back


@pytest.mark.parametrize(
    "text",
    ["mode: bogus", "env: nowhere", "seeds: [1, 1]", "colour: red", "- a list", "ppo: {clip: 2.0}", "mode: pegmarl\ndemos: []"],
)
def test_config_errors(text):
    with pytest.raises(ConfigError):
        ExperimentConfig.loads(text).validate()


def test_missing_demo_files_rejected(tmp_path):
    cfg = ExperimentConfig(mode="pegmarl", demos=[str(tmp_path / "nope.demo")])
    with pytest.raises(ConfigError, match="not found"):
        cfg.validate()


def test_egmarl_config_on_coop_rejected():
    with pytest.raises(ConfigError, match="continuous"):
        ExperimentConfig(env="coop_nav", mode="egmarl", demos=["x"]).validate(check_files=False)


def test_single_seed_aggregate_equals_run(tmp_path):
    result = run_experiment(_tiny(tmp_path))
    (seed_csv,) = result["seed_csvs"]
    run = read_metrics(seed_csv)
    agg = read_aggregate(result["aggregate"])
    assert len(run) == len(agg) == 1
    assert agg[0]["reward_mean"] == run[0]["mean_episodic_env_reward"]
    assert agg[0]["success_mean"] == run[0]["success_rate"]
    assert agg[0]["reward_std"] == 0.0 and agg[0]["n_seeds"] == 1
    assert (tmp_path / "run" / "config.yaml").exists()
    assert (tmp_path / "run" / "seed_0.ckpt").exists()


def test_same_config_gives_identical_files(tmp_path):
    a = run_experiment(_tiny(tmp_path / "a", iterations=2, eval_every=1))
    b = run_experiment(_tiny(tmp_path / "b", iterations=2, eval_every=1))
    assert a["seed_csvs"][0].read_bytes() == b["seed_csvs"][0].read_bytes()
    assert a["aggregate"].read_bytes() == b["aggregate"].read_bytes()


def test_constant_reward_has_zero_std(tmp_path):
    # a one-step horizon can neither reach a goal nor collide, so every return is 0
    cfg = _tiny(tmp_path, seeds=[0, 1, 2], env_overrides={"max_step": 1}, iterations=2, eval_every=1)
    rows = read_aggregate(run_experiment(cfg)["aggregate"])
    assert all(r["reward_std"] == 0.0 and r["n_seeds"] == 3 for r in rows)


def test_aggregate_matches_seed_files(tmp_path):
    paths = []
    rng = np.random.default_rng(0)
    for s in range(4):
        p = tmp_path / f"seed_{s}.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "env_steps", "mean_episodic_env_reward", "std", "success_rate"])
            for it in (10, 20):
                w.writerow([it, it * 4096, rng.uniform(0, 10), 0.0, rng.uniform()])
        paths.append(p)
    agg = aggregate(paths)
    for row in agg:
        vals = [r["mean_episodic_env_reward"] for p in paths for r in read_metrics(p) if r["iteration"] == row["iteration"]]
        assert row["reward_mean"] == pytest.approx(np.mean(vals), abs=1e-9)
        assert row["reward_std"] == pytest.approx(np.std(vals), abs=1e-9)


def test_checkpoint_round_trip(tmp_path):
    env = make_env("lava2", 2)
    learners = build_learners(env, "pegmarl", Rng(0, "ck"))
    save_checkpoint(tmp_path / "c.ckpt", learners)
    back = load_checkpoint(tmp_path / "c.ckpt", env)
    for a, b in zip(learners, back):
        np.testing.assert_array_equal(a.actor.flat_params(), b.actor.flat_params())
        np.testing.assert_array_equal(a.critic.flat_params(), b.critic.flat_params())
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "c.ckpt", make_env("lava3", 1))


# -- oracle ---------------------------------------------------------------------


def bfs_oracle_steps(env: GridWorld) -> int:
    """Uninformed breadth-first search over joint positions."""
    import itertools

    joint = list(itertools.product(range(env.n_actions), repeat=env.n_agents))
    start = tuple(map(tuple, env.grid.starts))
    seen = {start}
    queue = deque([(start, 0)])
    probe = GridWorld(env.spec, env.grid, len(joint), success_agents=env.success_agents,
                      freeze_at_goal=env.freeze_at_goal, door_always_open=env.door_always_open)
    while queue:
        state, g = queue.popleft()
        probe.set_state(np.array(state))
        _, _, _, _, info = probe.step(np.array(joint))
        ok = (info["collisions"] == 0) & ~info["lava"]
        if np.any(ok & info["success"]):
            return g + 1
        for k in np.flatnonzero(ok):
            nxt = tuple(map(tuple, probe.pos[k]))
            if nxt not in seen:
                seen.add(nxt)
                queue.append((nxt, g + 1))
    return -1


def test_corridor_oracle():
    spec = EnvSpec("lava2", n_agents=1, max_step=100, permdp_agent=0)
    assert oracle_reward(GridWorld(spec, parse_map("0.a"), 1)) == pytest.approx(9.98)


@pytest.mark.parametrize("kind", ["door_easy", "lava2"])
def test_oracle_matches_uninformed_search(kind):
    env = make_env(kind)
    steps = bfs_oracle_steps(env)
    assert oracle_reward(kind) == pytest.approx(10.0 - steps / env.spec.max_step)


def test_oracle_rejects_continuous():
    with pytest.raises(ValueError, match="continuous"):
        oracle_reward("coop_nav")


# -- visitation --------------------------------------------------------------------


def test_visitation_of_deterministic_policy(tmp_path):
    env = make_env("lava2")
    learners = build_learners(env, "mappo", Rng(4, "vis"))
    counts = rollout_visitation(env, learners, 1, np.random.default_rng(0), greedy=True)
    # replay the same greedy episode by hand
    path = [[], []]
    obs = env.reset()
    steps = 0
    while True:
        for i in range(2):
            path[i].append(tuple(int(v) for v in obs[0, i]))
        actions, _ = policy_actions(env, learners, obs, greedy=True)
        obs, _, term, trunc, _ = env.step(actions)
        steps += 1
        if term[0] or trunc[0]:
            break
    for i in range(2):
        expected = {}
        for cell in path[i]:
            expected[cell] = expected.get(cell, 0) + 1
        assert counts[i] == expected
        assert sum(counts[i].values()) == steps
    files = write_visitation(tmp_path, counts)
    rows = list(csv.DictReader(open(files[0])))
    assert sum(int(r["count"]) for r in rows) == steps


def test_demo_visitation_on_shortest_paths(tmp_path):
    paths = []
    for agent in range(2):
        p = tmp_path / f"a{agent}.demo"
        demo = expert_for("lava2", agent, Rng(0, f"v{agent}"), episodes=10)
        save_demo(p, demo)
        paths.append(p)
    counts = demo_visitation(paths)
    env = make_env("lava2")
    lava = env._lava
    for c in counts:
        assert all(not lava[y, x] for (x, y) in c)
    for agent, c in enumerate(counts):
        single = permdp("lava2", agent)
        sx, sy = single.grid.starts[0]
        assert sum(c.values()) == 10 * bfs_distances(single, single.grid.goals[0])[sx, sy]
